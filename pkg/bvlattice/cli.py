#!/usr/bin/env python3
"""
Batch driver for the identity suites.

Loads a lattice model with its named functionals, finite renormalization and
gauge data from a JSON file, runs the selected suites at the requested
truncation orders and writes a JSON report with a Markdown rendering.

Usage:
    python -m bvlattice check --model wave5.json --suite bv --hbar-order 3
    python -m bvlattice check --model trivial_pair.json --suite all --report out/report.json
    python -m bvlattice list-suites
"""
import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from sympy import ImmutableMatrix, Rational, SympifyError

from bvlattice.bv_core import theta0 as default_theta0
from bvlattice.errors import BVLatticeError, ModelLoadError, ModelValidationError
from bvlattice.graded_core import Functional, HbarSeries, Species, scalar
from bvlattice.lattice_model import Model, ModelSpec, build_model
from bvlattice.products import PerturbativeOrders
from bvlattice.renorm import RenMap
from bvlattice.reporting import build_report, write_report
from bvlattice.suites import DEFAULT_SCALES, SUITES, IdentityVerifier, SuiteContext, resolve_suites

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - [%(levelname)s] - %(message)s'
FIXTURE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')
GENERATOR_PATTERN = re.compile(r'^([A-Za-z_]\w*\*?)\((\d+)\)$')

EXIT_PASS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, default))
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={os.environ.get(name)!r}")
        return default


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteConfig:
    """Parameters of one ``check`` run."""

    model_path: str
    suites: Tuple[str, ...] = ('all',)
    hbar_order: int = 2
    v_order: int = 2
    seed: int = 0
    samples: int = 200
    report_path: Optional[str] = None
    scales: Tuple[Rational, ...] = DEFAULT_SCALES
    degree_bound: int = 3
    jobs: int = 1

    def __post_init__(self):
        if self.hbar_order < 0 or self.v_order < 0:
            raise ValueError(f"orders must be non-negative, got ({self.hbar_order}, {self.v_order})")
        if self.samples < 1:
            raise ValueError(f"samples must be positive, got {self.samples}")
        if any(s < 0 for s in self.scales):
            raise ValueError("scales must be non-negative")
        if self.degree_bound < 1:
            raise ValueError(f"degree bound must be positive, got {self.degree_bound}")

    def describe(self) -> Dict[str, Any]:
        data = asdict(self)
        data['suites'] = list(self.suites)
        data['scales'] = [str(s) for s in self.scales]
        data.pop('report_path')
        data.pop('jobs')
        return data


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    """A validated model and the named data shipped with it."""

    model: Model
    functionals: Dict[str, Functional] = field(default_factory=dict)
    Z: RenMap = field(default_factory=RenMap)
    theta0: Optional[Functional] = None
    psi: Optional[Functional] = None


def resolve_model_path(path: str) -> str:
    """Existing paths win; bare names fall back to the bundled fixtures."""
    if os.path.isfile(path):
        return path
    candidate = os.path.join(FIXTURE_DIR, os.path.basename(path))
    if os.path.isfile(candidate):
        return candidate
    raise ModelLoadError("model file not found", path=path)


def _rational(value, path: str, where: str) -> Rational:
    try:
        return Rational(str(value))
    except (SympifyError, TypeError, ValueError):
        raise ModelLoadError(f"not an exact rational: {value!r}", path=path, field=where)


def _matrix(rows, n: int, path: str, name: str) -> ImmutableMatrix:
    if not isinstance(rows, list) or len(rows) != n or any(not isinstance(r, list) or len(r) != n for r in rows):
        raise ModelLoadError(f"expected a dense {n}x{n} matrix", path=path, field=name)
    return ImmutableMatrix([[_rational(v, path, f"{name}[{i}][{j}]") for j, v in enumerate(row)]
                            for i, row in enumerate(rows)])


def _species(entries, path: str) -> List[Species]:
    if not isinstance(entries, list) or not entries:
        raise ModelLoadError("at least one species is required", path=path, field='species')
    out = []
    for i, entry in enumerate(entries):
        where = f"species[{i}]"
        if not isinstance(entry, dict) or 'name' not in entry:
            raise ModelLoadError("species entries need a name", path=path, field=where)
        try:
            out.append(Species(entry['name'], int(entry.get('parity', 0)),
                               ghost_number=int(entry.get('ghost_number', 0)),
                               propagating=bool(entry.get('propagating', False))))
        except (TypeError, ValueError, BVLatticeError) as e:
            raise ModelLoadError(str(e), path=path, field=where)
    return out


def _terms(model: Model, terms, path: str, where: str) -> Functional:
    """A term list ``[[coeff, ["phi(2)", ...]], ...]`` as an order-0 functional."""
    if not isinstance(terms, list):
        raise ModelLoadError("expected a list of [coefficient, generators] terms", path=path, field=where)
    pieces = []
    for i, term in enumerate(terms):
        if not isinstance(term, list) or len(term) != 2 or not isinstance(term[1], list):
            raise ModelLoadError("malformed term", path=path, field=f"{where}[{i}]")
        coeff, names = term
        generators = []
        for name in names:
            match = GENERATOR_PATTERN.match(str(name))
            if not match:
                raise ModelLoadError(f"cannot parse generator {name!r}", path=path, field=f"{where}[{i}]")
            try:
                generators.append(model.gen(match.group(1), int(match.group(2))))
            except ModelValidationError as e:
                raise ModelLoadError(str(e), path=path, field=f"{where}[{i}]")
        try:
            value = scalar(str(coeff))
        except BVLatticeError as e:
            raise ModelLoadError(str(e), path=path, field=f"{where}[{i}]")
        pieces.append(Functional.from_product(generators, 0, value))
    return Functional.sum(pieces, 0)


def _renormalization(data, path: str, model: Model) -> RenMap:
    if data is None:
        return RenMap(name='id')
    if not isinstance(data, dict) or not isinstance(data.get('kernels', {}), dict):
        raise ModelLoadError("expected {name, kernels}", path=path, field='Z')
    kernels = {}
    for n, coeffs in data.get('kernels', {}).items():
        where = f"Z.kernels.{n}"
        if not isinstance(coeffs, list) or not coeffs:
            raise ModelLoadError("kernels are lists of ℏ coefficients", path=path, field=where)
        try:
            kernels[int(n)] = HbarSeries(tuple(scalar(str(c)) for c in coeffs))
        except (ValueError, BVLatticeError) as e:
            raise ModelLoadError(str(e), path=path, field=where)
    depth = data.get('depth', 1)
    if isinstance(depth, bool) or not isinstance(depth, int) or depth < 1:
        raise ModelLoadError("depth must be a positive integer", path=path, field='Z.depth')
    species = data.get('species', [])
    if not isinstance(species, list) or not all(isinstance(s, str) for s in species):
        raise ModelLoadError("species must be a list of species names", path=path, field='Z.species')
    for name in species:
        try:
            model.species(name)
        except ModelValidationError as e:
            raise ModelLoadError(str(e), path=path, field='Z.species')
    return RenMap(kernels, name=data.get('name', 'Z'), depth=depth, species=tuple(species))


def load_model(path: str) -> ModelBundle:
    """
    Load and validate a model file.

    Args:
        path: JSON model file, or the bare name of a bundled fixture

    Returns:
        ModelBundle: the model with its functionals, Z, θ₀ and ψ

    Raises:
        ModelLoadError: unreadable file, malformed field or a violated model invariant
    """
    path = resolve_model_path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"invalid JSON at line {e.lineno}: {e.msg}", path=path)
    except OSError as e:
        raise ModelLoadError(str(e), path=path)
    if not isinstance(data, dict):
        raise ModelLoadError("top level must be an object", path=path)

    for required in ('sites', 'window', 'species', 'K'):
        if required not in data:
            raise ModelLoadError("missing required field", path=path, field=required)
    n = data['sites']
    if not isinstance(n, int) or n < 1:
        raise ModelLoadError("sites must be a positive integer", path=path, field='sites')
    spec = ModelSpec(
        n_sites=n,
        window=tuple(data['window']),
        K=_matrix(data['K'], n, path, 'K'),
        species=tuple(_species(data['species'], path)),
        time_order=tuple(data['order']) if data.get('order') is not None else None,
        delta_r=_matrix(data['Delta_R'], n, path, 'Delta_R') if data.get('Delta_R') is not None else None,
        H=_matrix(data['H'], n, path, 'H') if data.get('H') is not None else None,
        name=data.get('name', os.path.splitext(os.path.basename(path))[0]),
    )
    try:
        model = build_model(spec)
    except ModelValidationError as e:
        raise ModelLoadError(f"{type(e).__name__}: {e}", path=path) from e

    functionals = {name: _terms(model, terms, path, f"functionals.{name}")
                   for name, terms in (data.get('functionals') or {}).items()}
    theta = data.get('theta0')
    if theta == 'auto':
        theta = default_theta0(model, 0)
    elif theta is not None:
        theta = _terms(model, theta, path, 'theta0')
    psi = _terms(model, data['psi'], path, 'psi') if data.get('psi') is not None else None
    bundle = ModelBundle(model, functionals, _renormalization(data.get('Z'), path, model), theta, psi)
    logger.info(f"Loaded {model!r} with functionals {sorted(functionals)} and Z = {bundle.Z.name}")
    return bundle


# ---------------------------------------------------------------------------
# Running suites
# ---------------------------------------------------------------------------

def build_context(config: SuiteConfig, bundle: ModelBundle) -> SuiteContext:
    return SuiteContext(
        model=bundle.model,
        orders=PerturbativeOrders(config.hbar_order, config.v_order),
        seed=config.seed,
        samples=config.samples,
        functionals=bundle.functionals,
        Z=bundle.Z,
        theta0=bundle.theta0,
        psi=bundle.psi,
        scales=tuple(config.scales),
        degree_bound=config.degree_bound,
    )


def run_suite(config: SuiteConfig) -> Tuple[int, Dict[str, Any]]:
    """
    Run the configured suites.

    Returns:
        tuple: exit status (0 when every check passes, 1 otherwise) and the report
    """
    bundle = load_model(config.model_path)
    suites = resolve_suites(config.suites)
    verifier = IdentityVerifier(build_context(config, bundle))
    records = verifier.run(suites, jobs=config.jobs)
    report = build_report(records, config=config.describe())
    if config.report_path:
        write_report(report, config.report_path)
    status = EXIT_PASS if all(r.passed for r in records) else EXIT_FAILURE
    return status, report


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _scale(value: str) -> Rational:
    try:
        scale = Rational(value)
    except (SympifyError, TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"not a rational scale: {value!r}")
    if scale < 0:
        raise argparse.ArgumentTypeError(f"scales must be non-negative: {value}")
    return scale


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='bvlattice',
        description='Check BV and renormalization identities on finite lattice models',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # bv identities on the bundled five-site chain
  bvlattice check --model wave5.json --suite bv --hbar-order 3

  # everything, with a report
  bvlattice check --model trivial_pair.json --suite all --report out/report.json

Exit codes: 0 pass, 1 identity failure, 2 usage or load error
        """
    )
    parser.add_argument('--log-level', default=os.environ.get('BVLATTICE_LOG_LEVEL', 'INFO'),
                        help='Logging level (default: $BVLATTICE_LOG_LEVEL or INFO)')
    # also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--log-level', default=argparse.SUPPRESS, help='Logging level, overrides the global option')
    commands = parser.add_subparsers(dest='command', required=True)

    check = commands.add_parser('check', parents=[common], help='Run identity suites against a model file')
    check.add_argument('--model', required=True, help='Model JSON file or bundled fixture name')
    check.add_argument('--suite', action='append', choices=list(SUITES) + ['all'],
                       help='Suite to run; repeatable (default: all)')
    check.add_argument('--hbar-order', type=int, default=2, help='ℏ truncation order N (default: 2)')
    check.add_argument('--v-order', type=int, default=2, help='Coupling truncation order M (default: 2)')
    check.add_argument('--seed', type=int, default=_env_int('BVLATTICE_SEED', 0),
                       help='Random seed (default: $BVLATTICE_SEED or 0)')
    check.add_argument('--samples', type=int, default=_env_int('BVLATTICE_SAMPLES', 200),
                       help='Random samples per identity (default: $BVLATTICE_SAMPLES or 200)')
    check.add_argument('--report', help='Write the JSON report here (Markdown next to it)')
    check.add_argument('--lambda', dest='scales', type=_scale, action='append',
                       help='Regularization scale Λ for the scale suite; repeatable (default: 0, 1, 10)')
    check.add_argument('--degree-bound', type=int, default=_env_int('BVLATTICE_DEGREE_BOUND', 3),
                       help='Monomial degree bound for anomaly absorption (default: $BVLATTICE_DEGREE_BOUND or 3)')
    check.add_argument('--jobs', type=int, default=1, help='Suites run concurrently (default: 1)')

    commands.add_parser('list-suites', parents=[common], help='List the available suites')
    return parser


def configure_logging(level: str):
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format=LOG_FORMAT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS
    configure_logging(args.log_level)

    if args.command == 'list-suites':
        for name, (description, _) in SUITES.items():
            print(f"{name:10s} {description}")
        return EXIT_PASS

    try:
        config = SuiteConfig(
            model_path=args.model,
            suites=tuple(args.suite or ['all']),
            hbar_order=args.hbar_order,
            v_order=args.v_order,
            seed=args.seed,
            samples=args.samples,
            report_path=args.report,
            scales=tuple(args.scales) if args.scales else DEFAULT_SCALES,
            degree_bound=args.degree_bound,
            jobs=max(1, args.jobs),
        )
        status, report = run_suite(config)
    except ValueError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except ModelLoadError as e:
        logger.error(f"Could not load model: {e}")
        return EXIT_USAGE

    summary = report['summary']
    print(f"Results: {summary['passed']}/{summary['total_checks']} checks passed ({summary['success_rate']})")
    return status


if __name__ == '__main__':
    sys.exit(main())
