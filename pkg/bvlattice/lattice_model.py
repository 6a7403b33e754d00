"""
Finite causal lattices: sites, a time order, an interior window, the free
kinetic matrix K and the propagators derived from it, plus generalized
Lagrangians as rules on test vectors.

Green identities are enforced on window rows only: a finite symmetric K
cannot have distinct retarded and advanced two-sided inverses.
"""
import logging
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from sympy import I, ImmutableMatrix, Rational, eye, zeros

from bvlattice.errors import (
    GreenIdentityError,
    LagrangianAxiomError,
    ModelValidationError,
    RetardedSupportError,
    SymmetryError,
)
from bvlattice.graded_core import (
    Functional,
    Generator,
    Scalar,
    Species,
    scalar,
)

logger = logging.getLogger(__name__)

TestVector = Tuple[Rational, ...]


@dataclass(frozen=True)
class Kernel:
    """Hashable exact two-point kernel with Gaussian-rational entries."""

    entries: Tuple[Tuple[Scalar, ...], ...]

    @classmethod
    def from_matrix(cls, matrix) -> 'Kernel':
        rows, cols = matrix.shape
        return cls(tuple(tuple(scalar(matrix[i, j]) for j in range(cols)) for i in range(rows)))

    @property
    def size(self) -> int:
        return len(self.entries)

    def __call__(self, x: int, y: int) -> Scalar:
        return self.entries[x][y]

    @cached_property
    def nonzero(self) -> Tuple[Tuple[int, int, Scalar], ...]:
        return tuple((x, y, v) for x, row in enumerate(self.entries) for y, v in enumerate(row) if v)

    def matmul(self, other: 'Kernel') -> 'Kernel':
        n = self.size
        out = []
        for x in range(n):
            row = []
            for y in range(n):
                acc = scalar(0)
                for z in range(n):
                    a = self.entries[x][z]
                    if a:
                        b = other.entries[z][y]
                        if b:
                            acc += a * b
                row.append(acc)
            out.append(tuple(row))
        return Kernel(tuple(out))


@dataclass(frozen=True)
class ModelSpec:
    """Raw model description, as loaded from a fixture file."""

    n_sites: int
    window: Tuple[int, ...]
    K: ImmutableMatrix
    species: Tuple[Species, ...]
    time_order: Optional[Tuple[int, ...]] = None
    delta_r: Optional[ImmutableMatrix] = None
    H: Optional[ImmutableMatrix] = None
    name: str = 'model'


class Model:
    """A validated finite causal lattice with its propagators."""

    def __init__(self, spec: ModelSpec, delta_r: ImmutableMatrix):
        n = spec.n_sites
        self.name = spec.name
        self.n_sites = n
        self.sites = tuple(range(n))
        self.time_order = tuple(spec.time_order) if spec.time_order else self.sites
        self._rank = {s: r for r, s in enumerate(self.time_order)}
        self.window: FrozenSet[int] = frozenset(spec.window)
        self.K = ImmutableMatrix(spec.K)
        self.delta_r = ImmutableMatrix(delta_r)
        self.delta_a = self.delta_r.T
        self.delta = self.delta_r - self.delta_a
        self.delta_d = (self.delta_r + self.delta_a) / 2
        self.H = ImmutableMatrix(spec.H) if spec.H is not None else ImmutableMatrix(zeros(n, n))
        self.H_F = self.H + I * self.delta_d
        self._species: Dict[str, Species] = {}
        for sp in spec.species:
            self._species[sp.name] = sp
            anti = sp.antifield()
            self._species[anti.name] = anti

    # -- species and generators ---------------------------------------------

    @property
    def field_species(self) -> Tuple[Species, ...]:
        return tuple(s for s in self._species.values() if not s.is_antifield)

    @property
    def antifield_species(self) -> Tuple[Species, ...]:
        return tuple(s for s in self._species.values() if s.is_antifield)

    @property
    def propagating(self) -> Tuple[Species, ...]:
        return tuple(s for s in self.field_species if s.propagating)

    def species(self, name: str) -> Species:
        try:
            return self._species[name]
        except KeyError:
            raise ModelValidationError(f"unknown species {name!r} in model {self.name}")

    def gen(self, name: str, site: int) -> Generator:
        if site not in self._rank:
            raise ModelValidationError(f"site {site} outside model {self.name}")
        return Generator(self.species(name), site)

    def field(self, name: str, site: int, order: int) -> Functional:
        return Functional.generator(self.gen(name, site), order)

    @property
    def primary(self) -> Species:
        """The first propagating species (the scalar field φ of the bundled models)."""
        if not self.propagating:
            raise ModelValidationError(f"model {self.name} has no propagating species")
        return self.propagating[0]

    # -- causal structure ---------------------------------------------------

    def rank(self, site: int) -> int:
        return self._rank[site]

    def precedes(self, a: int, b: int) -> bool:
        return self._rank[a] < self._rank[b]

    def neighbors(self, site: int) -> FrozenSet[int]:
        return frozenset(u for u in self.sites if u != site and self.K[site, u] != 0)

    def closed_neighborhood(self, sites: Iterable[int]) -> FrozenSet[int]:
        out = set(sites)
        for s in list(out):
            out |= self.neighbors(s)
        return frozenset(out)

    # -- kernels for the products --------------------------------------------

    @cached_property
    def kernel_delta(self) -> Kernel:
        return Kernel.from_matrix(self.delta)

    @cached_property
    def kernel_delta_d(self) -> Kernel:
        return Kernel.from_matrix(self.delta_d)

    @cached_property
    def kernel_h(self) -> Kernel:
        return Kernel.from_matrix(self.H)

    @cached_property
    def kernel_k(self) -> Kernel:
        return Kernel.from_matrix(self.K)

    def kinetic_form(self, site: int, order: int, species: Optional[Species] = None) -> Functional:
        """(Kφ)(site) = ∂S₀/∂φ(site)."""
        sp = species or self.primary
        return Functional.sum(
            (Functional.generator(Generator(sp, u), order, self.K[site, u])
             for u in self.sites if self.K[site, u] != 0),
            order)

    def free_action(self, order: int, sites: Optional[Iterable[int]] = None) -> Functional:
        """½ Σ_{t∈sites} φ(t)(Kφ)(t), summed over every propagating species."""
        chosen = self.sites if sites is None else tuple(sites)
        half = Rational(1, 2)
        terms = []
        for sp in self.propagating:
            for t in chosen:
                phi_t = Functional.generator(Generator(sp, t), order)
                terms.append((phi_t * self.kinetic_form(t, order, sp)).scale(half))
        return Functional.sum(terms, order)

    def S0(self, order: int) -> Functional:
        return self.free_action(order)

    def __repr__(self) -> str:
        return f"Model({self.name!r}, n_sites={self.n_sites}, window={sorted(self.window)})"


# ---------------------------------------------------------------------------
# Propagators
# ---------------------------------------------------------------------------

def _lead(K, row: int, order: Sequence[int], rank: Dict[int, int]) -> Optional[int]:
    candidates = [u for u in order if K[row, u] != 0]
    if not candidates:
        return None
    return max(candidates, key=lambda u: rank[u])


def retarded_green(K, time_order: Sequence[int], window: Iterable[int]) -> ImmutableMatrix:
    """Exact forward substitution for Δ_R with (K·Δ_R)(t,·) = e_t on window rows.

    Each row t solves for Δ_R at its lead site (the latest site it couples
    to). Window rows claim their leads first; other rows only fill leads that
    are still free. Sites nobody claims carry Δ_R = 0.
    """
    K = ImmutableMatrix(K)
    n = K.shape[0]
    order = list(time_order)
    rank = {s: r for r, s in enumerate(order)}
    window = frozenset(window)
    claims: Dict[int, int] = {}

    for t in sorted(window, key=lambda s: rank[s]):
        lead = _lead(K, t, order, rank)
        if lead is None:
            raise RetardedSupportError(f"window row {t} of K vanishes; no retarded solution")
        if lead in claims:
            raise RetardedSupportError(
                f"rows {claims[lead]} and {t} both need site {lead} as pivot; K is not forward-solvable")
        claims[lead] = t
    for t in order:
        if t in window:
            continue
        lead = _lead(K, t, order, rank)
        if lead is not None and lead not in claims:
            claims[lead] = t

    D = [[Rational(0)] * n for _ in range(n)]
    for lead in sorted(claims, key=lambda s: rank[s]):
        t = claims[lead]
        pivot = K[t, lead]
        for s in range(n):
            acc = Rational(1) if t == s else Rational(0)
            for v in range(n):
                if v != lead and K[t, v] != 0:
                    acc -= K[t, v] * D[v][s]
            D[lead][s] = acc / pivot
    result = ImmutableMatrix(D)
    logger.debug(f"retarded Green function solved with {len(claims)} pivots")
    return result


def _check_retarded_support(delta_r, time_order: Sequence[int]):
    rank = {s: r for r, s in enumerate(time_order)}
    n = delta_r.shape[0]
    for t in range(n):
        for s in range(n):
            if rank[t] < rank[s] and delta_r[t, s] != 0:
                raise RetardedSupportError(
                    f"Δ_R({t},{s}) = {delta_r[t, s]} but site {t} precedes site {s}")


def build_model(spec: ModelSpec) -> Model:
    """Validate a model description and derive Δ_A, Δ, Δ_D, H_F."""
    n = spec.n_sites
    K = ImmutableMatrix(spec.K)
    if K.shape != (n, n):
        raise ModelValidationError(f"K has shape {K.shape}, expected ({n}, {n})")
    if K != K.T:
        raise SymmetryError("K must be symmetric")
    if spec.H is not None and ImmutableMatrix(spec.H) != ImmutableMatrix(spec.H).T:
        raise SymmetryError("H must be symmetric")
    if not set(spec.window) <= set(range(n)):
        raise ModelValidationError("window sites must lie in the lattice")
    order = tuple(spec.time_order) if spec.time_order else tuple(range(n))
    if sorted(order) != list(range(n)):
        raise ModelValidationError("time_order must be a permutation of the sites")

    if spec.delta_r is None:
        delta_r = retarded_green(K, order, spec.window)
    else:
        delta_r = ImmutableMatrix(spec.delta_r)
    _check_retarded_support(delta_r, order)

    ident = eye(n)
    k_dr = K * delta_r
    k_da = K * delta_r.T
    for t in spec.window:
        for s in range(n):
            if k_dr[t, s] != ident[t, s]:
                raise GreenIdentityError(f"(K·Δ_R)({t},{s}) = {k_dr[t, s]}, expected {ident[t, s]}")
            if k_da[t, s] != ident[t, s]:
                raise GreenIdentityError(f"(K·Δ_A)({t},{s}) = {k_da[t, s]}, expected {ident[t, s]}")

    model = Model(spec, delta_r)
    d_k = model.delta * K
    dd_k = model.delta_d * K
    for z in spec.window:
        for x in range(n):
            if d_k[x, z] != 0:
                raise GreenIdentityError(f"(Δ·K)({x},{z}) = {d_k[x, z]} on a window column")
            if dd_k[x, z] != ident[x, z]:
                raise GreenIdentityError(f"(Δ_D·K)({x},{z}) = {dd_k[x, z]} on a window column")
    logger.info(f"Built model {spec.name}: {n} sites, window {sorted(spec.window)}")
    return model


def wave_chain_spec(n_sites: int, species: Sequence[Species] = (), name: Optional[str] = None,
                    H=None) -> ModelSpec:
    """Discrete wave operator K(t,s) = δ_{t,s+1} − 2δ_{t,s} + δ_{t,s−1} on a chain."""
    K = zeros(n_sites, n_sites)
    for t in range(n_sites):
        K[t, t] = -2
        if t + 1 < n_sites:
            K[t, t + 1] = 1
            K[t + 1, t] = 1
    if not species:
        species = (Species('phi', 0, propagating=True),)
    return ModelSpec(
        n_sites=n_sites,
        window=tuple(range(1, n_sites - 1)),
        K=ImmutableMatrix(K),
        species=tuple(species),
        H=ImmutableMatrix(H) if H is not None else None,
        name=name or f"W{n_sites}",
    )


def wave_chain(n_sites: int, species: Sequence[Species] = (), H=None) -> Model:
    return build_model(wave_chain_spec(n_sites, species, H=H))


# ---------------------------------------------------------------------------
# Test vectors and Lagrangians
# ---------------------------------------------------------------------------

def cutoff_indicator(model: Model, sites: Iterable[int]) -> TestVector:
    chosen = frozenset(sites)
    return tuple(Rational(1) if s in chosen else Rational(0) for s in model.sites)


def support_of_vector(f: TestVector) -> FrozenSet[int]:
    return frozenset(s for s, v in enumerate(f) if v != 0)


def supp_df(model: Model, f: TestVector) -> FrozenSet[int]:
    """Sites where f differs from a K-neighbour (the lattice support of df)."""
    return frozenset(s for s in model.sites if any(f[u] != f[s] for u in model.neighbors(s)))


def add_vectors(*vectors: TestVector) -> TestVector:
    return tuple(sum(vals, Rational(0)) for vals in zip(*vectors))


@dataclass
class Lagrangian:
    """A rule from k test vectors to functionals (k = arity)."""

    rule: Callable[..., Functional]
    arity: int = 1
    name: str = 'L'

    def __call__(self, *fs: TestVector) -> Functional:
        if len(fs) != self.arity:
            raise LagrangianAxiomError(f"{self.name} takes {self.arity} test vectors, got {len(fs)}")
        return self.rule(*fs)


def random_test_vector(model: Model, rng: random.Random, sites: Optional[Iterable[int]] = None) -> TestVector:
    allowed = frozenset(model.sites if sites is None else sites)
    return tuple(Rational(rng.randint(-2, 3), rng.randint(1, 2)) if s in allowed else Rational(0)
                 for s in model.sites)


def random_functional(model: Model, rng: random.Random, order: int, sites: Optional[Iterable[int]] = None,
                      degree: int = 3, max_antifields: int = 1, species: Optional[Sequence[str]] = None,
                      terms: int = 3) -> Functional:
    """A seeded random graded polynomial on ``sites`` (the window by default)."""
    chosen = sorted(model.window if sites is None else sites)
    names = species or [sp.name for sp in model.field_species]
    fields = [model.species(n) for n in names]
    pool = [Generator(sp, s) for sp in fields for s in chosen]
    anti = [Generator(sp.antifield(), s) for sp in fields for s in chosen]
    out = []
    for _ in range(rng.randint(1, terms)):
        gens = [rng.choice(pool) for _ in range(rng.randint(1, degree))]
        n_af = rng.randint(0, max_antifields) if anti else 0
        gens += [rng.choice(anti) for _ in range(min(n_af, degree))]
        rng.shuffle(gens)
        coeff = Rational(rng.randint(-3, 3) or 1, rng.randint(1, 2))
        out.append(Functional.from_product(gens, order, coeff))
    return Functional.sum(out, order)


def _split_supports(model: Model, rng: random.Random) -> Tuple[TestVector, TestVector, TestVector]:
    """Random f, g, h with supp f ∩ supp h = ∅."""
    sites = list(model.sites)
    rng.shuffle(sites)
    cut = rng.randint(0, len(sites))
    left, right = sites[:cut], sites[cut:]
    return (random_test_vector(model, rng, left),
            random_test_vector(model, rng, model.sites),
            random_test_vector(model, rng, right))


def validate_lagrangian(L: Lagrangian, model: Model, samples: int = 8, seed: int = 0) -> Lagrangian:
    """Sample the support axiom (up to the kinetic stencil) and additivity in every argument."""
    rng = random.Random(seed)
    for _ in range(samples):
        fs = [random_test_vector(model, rng) for _ in range(L.arity)]
        value = L(*fs)
        allowed = model.closed_neighborhood(frozenset().union(*(support_of_vector(f) for f in fs)))
        if not value.support() <= allowed:
            raise LagrangianAxiomError(
                f"{L.name}: support {sorted(value.support())} escapes the stencil of {sorted(allowed)}")
        for slot in range(L.arity):
            f, g, h = _split_supports(model, rng)

            def at(vec):
                args = list(fs)
                args[slot] = vec
                return L(*args)

            lhs = at(add_vectors(f, g, h))
            rhs = at(add_vectors(f, g)) - at(g) + at(add_vectors(g, h))
            if lhs != rhs:
                raise LagrangianAxiomError(f"{L.name}: additivity fails in argument {slot}")
    zero = tuple(Rational(0) for _ in model.sites)
    if L.arity == 1 and not L(zero).is_zero():
        raise LagrangianAxiomError(f"{L.name}: L(0) must vanish")
    return L


def lagrangian_apply(L: Lagrangian, *fs: TestVector) -> Functional:
    return L(*fs)


def free_lagrangian(model: Model, order: int) -> Lagrangian:
    """L₀(f) = ½ Σ_t f(t) φ(t)(Kφ)(t)."""
    half = Rational(1, 2)
    sp = model.primary

    def rule(f: TestVector) -> Functional:
        terms = []
        for t in model.sites:
            if f[t] == 0:
                continue
            phi_t = Functional.generator(Generator(sp, t), order)
            terms.append((phi_t * model.kinetic_form(t, order, sp)).scale(scalar(f[t] * half)))
        return Functional.sum(terms, order)

    return Lagrangian(rule, 1, 'L0')


def density_lagrangian(model: Model, density: Callable[[int], Functional], order: int,
                       name: str = 'L1') -> Lagrangian:
    """L(f) = Σ_t f(t)·density(t) for a single-site density."""

    def rule(f: TestVector) -> Functional:
        return Functional.sum((density(t).scale(scalar(f[t])) for t in model.sites if f[t] != 0), order)

    return Lagrangian(rule, 1, name)


def product_lagrangian(*factors: Lagrangian, name: str = 'Lk') -> Lagrangian:
    """Extended Lagrangian (f₁,…,f_k) ↦ L₁(f₁)·…·L_k(f_k), additive in each argument."""

    def rule(*fs: TestVector) -> Functional:
        value = factors[0](fs[0])
        for L, f in zip(factors[1:], fs[1:]):
            value = value * L(f)
        return value

    return Lagrangian(rule, len(factors), name)


@dataclass
class EquivalenceResult:
    equivalent: bool
    witness: Optional[Tuple[TestVector, ...]] = None
    offending_sites: FrozenSet[int] = field(default_factory=frozenset)


def _plateau_vectors(model: Model, rng: random.Random, arity: int, samples: int) -> List[Tuple[TestVector, ...]]:
    ones = tuple(Rational(1) for _ in model.sites)
    tuples = [tuple(ones for _ in range(arity)),
              tuple(cutoff_indicator(model, model.window) for _ in range(arity))]
    for _ in range(samples):
        group = []
        for _ in range(arity):
            a, b = sorted(rng.sample(range(model.n_sites + 1), 2))
            level = Rational(rng.randint(1, 3))
            group.append(tuple(level if a <= s < b else Rational(0) for s in model.sites))
        tuples.append(tuple(group))
    return tuples


def lagrangian_equiv(L1: Lagrangian, L2: Lagrangian, model: Model, samples: int = 12,
                     seed: int = 0) -> EquivalenceResult:
    """Check supp((L1−L2)(f)) ⊆ ∪ supp df_i on sampled plateau test vectors."""
    if L1.arity != L2.arity:
        raise LagrangianAxiomError("equivalence needs Lagrangians of the same arity")
    rng = random.Random(seed)
    for fs in _plateau_vectors(model, rng, L1.arity, samples):
        diff = L1(*fs) - L2(*fs)
        boundary = frozenset().union(*(supp_df(model, f) for f in fs))
        escaped = diff.support() - boundary
        if escaped:
            logger.debug(f"{L1.name} ≁ {L2.name}: difference lives on {sorted(escaped)}")
            return EquivalenceResult(False, fs, frozenset(escaped))
    return EquivalenceResult(True)
