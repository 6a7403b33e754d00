#!/usr/bin/env python3
"""
Full verification sweep over the bundled models.

Runs every identity suite on each bundled fixture and writes one combined
report. Intended for release checks; a single model is better served by
``python -m bvlattice check``.

Usage:
    python tools/run_checks.py
    python tools/run_checks.py --hbar-order 3 --v-order 3 --output out/verification_results.json
"""
import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bvlattice.cli import LOG_FORMAT, SuiteConfig, load_model, build_context  # noqa: E402
from bvlattice.errors import BVLatticeError  # noqa: E402
from bvlattice.reporting import build_report, write_report  # noqa: E402
from bvlattice.suites import SUITES, IdentityVerifier  # noqa: E402

logging.basicConfig(
    level=os.environ.get('BVLATTICE_LOG_LEVEL', 'INFO').upper(),
    format=LOG_FORMAT
)
logger = logging.getLogger(__name__)

BUNDLED_MODELS = ('wave5.json', 'wave7.json', 'trivial_pair.json')


class FixtureSweep:
    """Runs all suites on each bundled model and merges the records."""

    def __init__(self, hbar_order: int, v_order: int, seed: int, samples: int):
        self.hbar_order = hbar_order
        self.v_order = v_order
        self.seed = seed
        self.samples = samples
        self.records = []
        self.broken = []

    def run_model(self, name: str) -> bool:
        logger.info(f"Verifying {name}...")
        config = SuiteConfig(name, tuple(SUITES), self.hbar_order, self.v_order, self.seed, self.samples)
        try:
            bundle = load_model(name)
        except BVLatticeError as e:
            logger.error(f"  ✗ {name} could not be loaded: {e}")
            self.broken.append(name)
            return False
        records = IdentityVerifier(build_context(config, bundle)).run(list(SUITES))
        for record in records:
            record.suite = f"{bundle.model.name}:{record.suite}"
        self.records.extend(records)
        return all(r.passed for r in records)

    def run_all(self, output: str) -> bool:
        outcomes = {name: self.run_model(name) for name in BUNDLED_MODELS}
        logger.info("=" * 60)
        for name, ok in outcomes.items():
            logger.info(f"  {'✓ PASS' if ok else '✗ FAIL'}: {name}")
        logger.info("=" * 60)
        config = {'models': list(BUNDLED_MODELS), 'hbar_order': self.hbar_order,
                  'v_order': self.v_order, 'seed': self.seed, 'samples': self.samples}
        write_report(build_report(self.records, config=config), output)
        return all(outcomes.values())


def main():
    parser = argparse.ArgumentParser(description='Run every identity suite on the bundled models')
    parser.add_argument('--hbar-order', type=int, default=2, help='ℏ truncation order (default: 2)')
    parser.add_argument('--v-order', type=int, default=2, help='Coupling truncation order (default: 2)')
    parser.add_argument('--seed', type=int, default=int(os.environ.get('BVLATTICE_SEED', 0)))
    parser.add_argument('--samples', type=int, default=int(os.environ.get('BVLATTICE_SAMPLES', 20)))
    parser.add_argument('--output', default='verification_results.json', help='Report path')
    args = parser.parse_args()

    sweep = FixtureSweep(args.hbar_order, args.v_order, args.seed, args.samples)
    success = sweep.run_all(args.output)
    return 0 if success else 1


if __name__ == '__main__':
    sys.exit(main())
