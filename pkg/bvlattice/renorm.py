"""
Renormalized time ordering on lattice models.

Functionals are split into symmetric tensors of single-site factors (β); the
family T̂_n of a finite renormalization Z maps those tensors back, with Z's
same-site counterterms inserted so that the renormalized S-matrix is
Ŝ = S∘Z. Products and brackets under T_ren are carried in tensor form and
only evaluated at the end, so that n-fold products of local functionals are
exactly T̂_n. On top of that sit the anomalous Master Ward identity, the
renormalized master equation and BV operator, order-by-order anomaly
absorption and renormalization-group covariance checks.
"""
import logging
import random
from dataclasses import dataclass, field
from itertools import combinations, combinations_with_replacement, product as cartesian
from typing import Callable, Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from sympy.polys.domains import QQ_I
from sympy.polys.matrices import DomainMatrix
from sympy.utilities.iterables import multiset_partitions

from bvlattice.bv_core import antibracket, bv_laplacian, i_hbar, qbv_hat
from bvlattice.errors import (
    AnomalyLocalityError,
    GradingError,
    ModelValidationError,
    NotMultilocalError,
    PreconditionError,
    RenMapError,
    TruncationMismatchError,
)
from bvlattice.graded_core import (
    I_UNIT,
    UNIT_MONOMIAL,
    Functional,
    Generator,
    HbarSeries,
    Monomial,
    Scalar,
    factorial_inverse,
    mono_derivative,
    mono_mul,
    pointwise_product,
    rational_scalar,
    scalar,
)
from bvlattice.lattice_model import (
    Lagrangian,
    Model,
    TestVector,
    cutoff_indicator,
    density_lagrangian,
    free_lagrangian,
    random_functional,
    supp_df,
)
from bvlattice.products import (
    CouplingSeries,
    PerturbativeOrders,
    SeriesLike,
    interaction_series,
    model_products,
    operand_series,
    require_window,
    scale_up,
    series_exp,
    series_inverse,
    stored_exponent,
    tprod,
    unscale,
)

logger = logging.getLogger(__name__)

HALF = rational_scalar(1, 2)


# ---------------------------------------------------------------------------
# Multilocal tensors and β
# ---------------------------------------------------------------------------

TensorKey = Tuple[Monomial, ...]


def _mono_key(m: Monomial):
    return tuple((g.key, k) for g, k in m.factors)


def _block_key(block: Monomial):
    return (min(block.sites), _mono_key(block))


def _koszul_sign(parities: Sequence[int], perm: Sequence[int]) -> int:
    sign = 1
    for a in range(len(perm)):
        for b in range(a + 1, len(perm)):
            if perm[a] > perm[b] and parities[perm[a]] and parities[perm[b]]:
                sign = -sign
    return sign


def _canonical(blocks: Sequence[Monomial]) -> Tuple[int, Optional[TensorKey]]:
    """Sort the factors of a symmetric tensor by (site, monomial); unit factors drop out.

    Returns the Koszul sign of the reordering and the key, or (0, None) when an
    odd factor repeats.
    """
    items = [b for b in blocks if b.factors]
    perm = sorted(range(len(items)), key=lambda i: _block_key(items[i]))
    key = tuple(items[i] for i in perm)
    for a, b in zip(key, key[1:]):
        if a == b and a.parity:
            return 0, None
    return _koszul_sign([b.parity for b in items], perm), key


def _accumulate(terms: Dict, key, value: HbarSeries):
    prev = terms.get(key)
    value = value if prev is None else prev + value
    if value:
        terms[key] = value
    else:
        terms.pop(key, None)


@dataclass
class MultilocalTensor:
    """Σ c·(L₁ ⊗ … ⊗ L_k) with single-site monomials L_i, graded symmetric.

    Keys list the factors in (site, monomial) order and may repeat a site; the
    empty key is the rank-0 constant.
    """

    terms: Dict[TensorKey, HbarSeries]
    order: int

    def __post_init__(self):
        self.terms = {k: c for k, c in self.terms.items() if c}

    @classmethod
    def zero(cls, order: int) -> 'MultilocalTensor':
        return cls({}, order)

    @classmethod
    def one(cls, order: int) -> 'MultilocalTensor':
        return cls({(): HbarSeries.one(order)}, order)

    @property
    def rank(self) -> int:
        return max((len(k) for k in self.terms), default=0)

    def component(self, k: int) -> 'MultilocalTensor':
        return MultilocalTensor({key: c for key, c in self.terms.items() if len(key) == k}, self.order)

    @property
    def constant(self) -> HbarSeries:
        return self.terms.get((), HbarSeries.zero(self.order))

    def __bool__(self) -> bool:
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def _check(self, other: 'MultilocalTensor'):
        if self.order != other.order:
            raise TruncationMismatchError(self.order, other.order)

    def __add__(self, other: 'MultilocalTensor') -> 'MultilocalTensor':
        self._check(other)
        terms = dict(self.terms)
        for key, c in other.terms.items():
            _accumulate(terms, key, c)
        return MultilocalTensor(terms, self.order)

    def __neg__(self) -> 'MultilocalTensor':
        return MultilocalTensor({k: -c for k, c in self.terms.items()}, self.order)

    def __sub__(self, other: 'MultilocalTensor') -> 'MultilocalTensor':
        return self + (-other)

    def scale(self, factor) -> 'MultilocalTensor':
        if isinstance(factor, HbarSeries):
            return MultilocalTensor({k: c * factor for k, c in self.terms.items()}, self.order)
        return MultilocalTensor({k: c.scale(factor) for k, c in self.terms.items()}, self.order)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultilocalTensor):
            return NotImplemented
        return self.order == other.order and self.terms == other.terms

    __hash__ = None


TensorSeries = List[MultilocalTensor]


def _site_blocks(mono: Monomial) -> TensorKey:
    # factors are sorted by (site, name), so the blocks concatenate back to mono without a sign
    blocks: Dict[int, list] = {}
    for g, m in mono.factors:
        blocks.setdefault(g.site, []).append((g, m))
    return tuple(Monomial(tuple(fs)) for _, fs in sorted(blocks.items()))


def beta_decompose(F: Functional, max_rank: Optional[int] = None) -> MultilocalTensor:
    """β(F) by grouping each monomial's factors per site."""
    terms: Dict[TensorKey, HbarSeries] = {}
    for mono, c in F.terms.items():
        key = _site_blocks(mono)
        if max_rank is not None and len(key) > max_rank:
            raise NotMultilocalError(f"monomial {mono} spans {len(key)} sites, above rank {max_rank}")
        terms[key] = c
    return MultilocalTensor(terms, F.order)


def m_product(tensor: MultilocalTensor) -> Functional:
    """m: multiply the factors of every elementary tensor."""
    out: Dict[Monomial, HbarSeries] = {}
    for key, c in tensor.terms.items():
        sign, mono = 1, UNIT_MONOMIAL
        for block in key:
            s, mono = mono_mul(mono, block)
            if mono is None:
                break
            sign *= s
        if mono is None:
            continue
        value = c if sign > 0 else -c
        prev = out.get(mono)
        out[mono] = value if prev is None else prev + value
    return Functional(out, tensor.order)


def beta_reconstruct(F: Functional, max_rank: Optional[int] = None) -> MultilocalTensor:
    """β(F) by inclusion–exclusion over site subsets.

    The part of F living exactly on a site set S is Σ_{T⊆S} (−1)^{|S∖T|} F|_T,
    where F|_T sets every generator outside T to zero; it is then peeled into
    its single-site factors.
    """
    candidates = sorted({m.sites for m in F.terms}, key=lambda s: (len(s), sorted(s)))
    terms: Dict[TensorKey, HbarSeries] = {}
    for S in candidates:
        k = len(S)
        exact = Functional.sum(
            (F.restrict(T).scale(-1 if (k - r) % 2 else 1)
             for r in range(k + 1) for T in combinations(sorted(S), r)),
            F.order).filter(lambda m, S=S: m.sites == S)
        if not exact:
            continue
        if max_rank is not None and k > max_rank:
            raise NotMultilocalError(f"component on sites {sorted(S)} exceeds rank {max_rank}")
        for mono, c in exact.terms.items():
            terms[_site_blocks(mono)] = c
    tensor = MultilocalTensor(terms, F.order)
    if m_product(tensor) != F:
        raise NotMultilocalError("peeling left a nonzero residual")
    return tensor


def tensor_product(s: MultilocalTensor, t: MultilocalTensor) -> MultilocalTensor:
    """s ⊗ t in the graded symmetric algebra of local functionals."""
    s._check(t)
    terms: Dict[TensorKey, HbarSeries] = {}
    for k1, c1 in s.terms.items():
        for k2, c2 in t.terms.items():
            sign, key = _canonical(k1 + k2)
            if key is None:
                continue
            c = c1 * c2
            _accumulate(terms, key, c if sign > 0 else -c)
    return MultilocalTensor(terms, s.order)


def _convolve_tensors(s: TensorSeries, t: TensorSeries,
                      product: Callable[[MultilocalTensor, MultilocalTensor], MultilocalTensor]) -> TensorSeries:
    if len(s) != len(t):
        raise TruncationMismatchError(len(s) - 1, len(t) - 1)
    out = []
    for k in range(len(s)):
        acc = MultilocalTensor.zero(s[0].order)
        for a in range(k + 1):
            if s[a] and t[k - a]:
                acc = acc + product(s[a], t[k - a])
        out.append(acc)
    return out


# ---------------------------------------------------------------------------
# Finite renormalizations
# ---------------------------------------------------------------------------

def _hbar_order(A: SeriesLike) -> int:
    return A.hbar_order if isinstance(A, CouplingSeries) else A.order


def _derive(A: SeriesLike, g: Generator) -> SeriesLike:
    if isinstance(A, CouplingSeries):
        return A.map(lambda F: F.derivative(g))
    return A.derivative(g)


def _times(A: SeriesLike, B: SeriesLike) -> SeriesLike:
    if isinstance(A, CouplingSeries):
        return A.convolve(B, pointwise_product)
    return pointwise_product(A, B)


def _power(A: SeriesLike, n: int) -> SeriesLike:
    result = A
    for _ in range(n - 1):
        result = _times(result, A)
    return result


def _zero_like(A: SeriesLike) -> SeriesLike:
    if isinstance(A, CouplingSeries):
        return CouplingSeries.zero(A.hbar_order, A.v_order)
    return Functional.zero(A.order)


def _align(*items: SeriesLike) -> Tuple[SeriesLike, ...]:
    """Promote bare functionals to λ-constant series when any item is a series."""
    series = [a for a in items if isinstance(a, CouplingSeries)]
    if not series:
        return items
    M = series[0].v_order
    return tuple(a if isinstance(a, CouplingSeries) else CouplingSeries.constant(a, M) for a in items)


@dataclass(frozen=True)
class RenMap:
    """Z(V) = V + Σ_{n≥2} κ_n/n! Σ_g (∂_g^d V)^n over the contracted generators g.

    Contracted generators are the even field generators of ``species`` (the
    propagating species when empty) and d is ``depth``. ``kernels`` maps n to
    the constant ℏ-series κ_n; ``shift`` adds a constant and exists to
    describe maps that violate Z(0) = 0.
    """

    kernels: Mapping[int, HbarSeries] = field(default_factory=dict)
    shift: Optional[HbarSeries] = None
    name: str = 'Z'
    depth: int = 1
    species: Tuple[str, ...] = ()

    @property
    def is_identity(self) -> bool:
        return not self.shift and not any(self.kernels.values())

    def contracts(self, g: Generator) -> bool:
        if g.odd or g.is_antifield:
            return False
        if self.species:
            return g.species.name in self.species
        return g.species.propagating

    def generators(self, A: SeriesLike) -> List[Generator]:
        comps = A.components if isinstance(A, CouplingSeries) else (A,)
        gens = set()
        for c in comps:
            gens |= {g for g in c.generators() if self.contracts(g)}
        return sorted(gens, key=lambda g: g.key)

    def differentiate(self, A: SeriesLike, g: Generator) -> SeriesLike:
        """∂_g^d A."""
        for _ in range(self.depth):
            A = _derive(A, g)
        return A

    def _kappa(self, n: int, order: int, weight: int) -> HbarSeries:
        return self.kernels[n].pad(order).scale(factorial_inverse(weight))

    def apply(self, V: SeriesLike) -> SeriesLike:
        order = _hbar_order(V)
        out = V
        if self.shift:
            constant = Functional({UNIT_MONOMIAL: self.shift.pad(order)}, order)
            out = out + (CouplingSeries.constant(constant, V.v_order)
                         if isinstance(V, CouplingSeries) else constant)
        gens = self.generators(V)
        for n in sorted(self.kernels):
            if not self.kernels[n]:
                continue
            kappa = self._kappa(n, order, n)
            for g in gens:
                d = self.differentiate(V, g)
                if d.is_zero():
                    continue
                out = out + _power(d, n).scale(kappa)
        return out

    def derivative(self, V: SeriesLike, args: Sequence[SeriesLike]) -> SeriesLike:
        """Z^{(j)}_V(L₁,…,L_j) = [L₁ if j = 1] + Σ_{n≥max(j,2)} κ_n/(n−j)! Σ_g (∂_g^dV)^{n−j} Π_i ∂_g^d L_i."""
        if not args:
            raise PreconditionError("Z^(j) needs at least one argument")
        V, *args = _align(V, *args)
        j = len(args)
        order = _hbar_order(V)
        out = args[0] if j == 1 else _zero_like(args[0])
        common = set(self.generators(args[0]))
        for a in args[1:]:
            common &= set(self.generators(a))
        for n in sorted(self.kernels):
            if n < max(j, 2) or not self.kernels[n]:
                continue
            kappa = self._kappa(n, order, n - j)
            for g in sorted(common, key=lambda g: g.key):
                term = self.differentiate(args[0], g)
                for a in args[1:]:
                    term = _times(term, self.differentiate(a, g))
                if n > j:
                    dV = self.differentiate(V, g)
                    if dV.is_zero():
                        continue
                    term = _times(_power(dV, n - j), term)
                out = out + term.scale(kappa)
        return out

    def first_derivative(self, V: SeriesLike, X: SeriesLike) -> SeriesLike:
        """Z^{(1)}_V(X) = X + Σ_n κ_n/(n−1)! Σ_g (∂_g^d V)^{n−1} ∂_g^d X."""
        return self.derivative(V, [X])

    def first_derivative_inverse(self, V: SeriesLike, G: SeriesLike) -> SeriesLike:
        """Solve Z^{(1)}_V(Y) = G; Z^{(1)}_V − id raises the ℏ order, so the iteration is finite."""
        if self.is_identity:
            return G
        Y = G
        for _ in range(_hbar_order(G) + 1):
            nxt = G - (self.first_derivative(V, Y) - Y)
            if nxt == Y:
                break
            Y = nxt
        return Y

    def shifted(self, V: SeriesLike, F: SeriesLike) -> SeriesLike:
        """Z_V(F) = Z(V+F) − Z(V)."""
        V, F = _align(V, F)
        return self.apply(V + F) - self.apply(V)


def counterterm_map(coefficient=1, hbar_power: int = 1, n: int = 2, depth: int = 1,
                    species: Sequence[str] = ()) -> RenMap:
    """A single same-site kernel κ_n = coefficient·ℏ^hbar_power."""
    return RenMap({n: HbarSeries.monomial(coefficient, hbar_power, hbar_power)}, name=f"Z{n}",
                  depth=depth, species=tuple(species))


@dataclass
class ZValidation:
    valid: bool
    failures: List[str] = field(default_factory=list)
    support_checked: int = 0
    field_equation: bool = True


def _local_sample(model: Model, rng: random.Random, order: int, sites: Sequence[int],
                  names: Sequence[str]) -> Functional:
    pieces = [random_functional(model, rng, order, sites=[s], max_antifields=0, species=list(names))
              for s in sites if rng.random() < 0.8]
    return Functional.sum(pieces, order)


def _structure_failures(Z: RenMap, model: Model) -> List[str]:
    failures = []
    if Z.depth < 1:
        failures.append(f"depth {Z.depth} < 1")
    for name in Z.species:
        try:
            sp = model.species(name)
        except ModelValidationError:
            failures.append(f"unknown species {name!r}")
            continue
        if sp.odd or sp.is_antifield:
            failures.append(f"species {name} cannot be contracted: it is odd or an antifield")
    for n, kappa in Z.kernels.items():
        if n < 2:
            failures.append(f"kernel arity {n} < 2")
        if not isinstance(kappa, HbarSeries):
            failures.append(f"Z4: kernel {n} is not a field-independent constant")
        elif kappa.coeffs[0]:
            failures.append(f"kernel {n} has an ℏ⁰ part")
    return failures


def z_validate(Z: RenMap, model: Model, samples: int = 6, seed: int = 0, order: int = 2) -> ZValidation:
    """Check Z(0) = 0, Z^{(1)}(0) = id, additivity, field independence and supp Z_V(F) ⊆ supp F.

    Also reports whether Z commutes with adding linear terms in the contracted
    propagating fields; that is informational and never fails validation.
    """
    rng = random.Random(seed)
    failures = _structure_failures(Z, model)
    if failures:
        return ZValidation(False, failures)
    zero = Functional.zero(order)
    sites = list(model.sites)
    names = list(Z.species) or [sp.name for sp in model.propagating]

    if Z.apply(zero):
        failures.append("Z1: Z(0) != 0")
    for _ in range(samples):
        X = _local_sample(model, rng, order, sites, names)
        if Z.first_derivative(zero, X) != X:
            failures.append("Z2: Z'(0) != id")
            break
    for _ in range(samples):
        rng.shuffle(sites)
        cut = rng.randint(1, len(sites) - 1)
        A = _local_sample(model, rng, order, sites[:cut], names)
        B = _local_sample(model, rng, order, sites, names)
        C = _local_sample(model, rng, order, sites[cut:], names)
        if Z.apply(A + B + C) != Z.apply(A + B) - Z.apply(B) + Z.apply(B + C):
            failures.append("Z3: additivity fails")
            break
    checked = 0
    for _ in range(samples):
        V = _local_sample(model, rng, order, sites, names)
        F = _local_sample(model, rng, order, rng.sample(sites, rng.randint(1, len(sites))), names)
        escaped = Z.shifted(V, F).support() - F.support()
        checked += 1
        if escaped:
            failures.append(f"supp Z_V(F) leaves supp F at {sorted(escaped)}")
            break

    field_equation = True
    linear = [sp for sp in model.propagating if Z.contracts(Generator(sp, sites[0]))]
    if linear and not Z.is_identity:
        for _ in range(samples):
            V = _local_sample(model, rng, order, sites, names)
            h = Functional.sum((Functional.generator(Generator(sp, x), order, rng.randint(1, 3))
                                for sp in linear for x in sorted(sites)), order)
            if Z.apply(V + h) != Z.apply(V) + h:
                field_equation = False
                logger.info(f"{Z.name} does not commute with linear field terms (depth {Z.depth})")
                break
    return ZValidation(not failures, failures, checked, field_equation)


# ---------------------------------------------------------------------------
# T_n families and the renormalized time ordering
# ---------------------------------------------------------------------------

@dataclass
class TnFamily:
    """Time-ordered products T_n of a model, corrected by a finite renormalization Z."""

    model: Model
    Z: RenMap = field(default_factory=RenMap)


def make_tn_family(model: Model, Z: Optional[RenMap] = None, samples: int = 4, seed: int = 0) -> TnFamily:
    Z = Z or RenMap()
    report = z_validate(Z, model, samples=samples, seed=seed)
    if not report.valid:
        raise RenMapError(f"{Z.name} is not a valid renormalization: {'; '.join(report.failures)}")
    diagonal = [x for x in model.sites if model.kernel_delta_d(x, x)]
    if diagonal:
        logger.warning(f"{model.name}: Δ_D has diagonal entries at {diagonal}; T_ren differs from T on locals")
    return TnFamily(model, Z)


def _linked_classes(gen_sets: Sequence[FrozenSet[Generator]]) -> List[List[int]]:
    """Argument indices grouped into classes chained by shared contracted generators."""
    parent = list(range(len(gen_sets)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: Dict[Generator, int] = {}
    for i, gens in enumerate(gen_sets):
        for g in gens:
            if g in owner:
                parent[find(i)] = find(owner[g])
            else:
                owner[g] = i
    classes: Dict[int, List[int]] = {}
    for i in range(len(gen_sets)):
        classes.setdefault(find(i), []).append(i)
    return sorted(classes.values())


def _linked_partitions(gen_sets: Sequence[FrozenSet[Generator]], Z: RenMap) -> Iterator[List[List[int]]]:
    """Set partitions whose blocks stay inside one linked class; every other block has Z_m = 0."""
    if Z.is_identity:
        yield [[i] for i in range(len(gen_sets))]
        return
    classes = _linked_classes(gen_sets)
    for choice in cartesian(*(list(multiset_partitions(c)) for c in classes)):
        yield [block for part in choice for block in part]


def _z_block(Z: RenMap, args: Sequence[Functional]) -> Functional:
    """Z_m(A₁,…,A_m) = κ_m Σ_g Π_i ∂_g^d A_i; Z₁ is the identity."""
    if len(args) == 1:
        return args[0]
    order = args[0].order
    kappa = Z.kernels.get(len(args))
    if not kappa:
        return Functional.zero(order)
    common = set(Z.generators(args[0]))
    for a in args[1:]:
        common &= set(Z.generators(a))
    terms = []
    for g in sorted(common, key=lambda g: g.key):
        value = Z.differentiate(args[0], g)
        for a in args[1:]:
            value = pointwise_product(value, Z.differentiate(a, g))
        terms.append(value)
    return Functional.sum(terms, order).scale(kappa.pad(order))


def _ordered_product(blocks: Sequence[Functional], model: Model, order: int) -> Functional:
    value = Functional.one(order)
    for b in blocks:
        value = tprod(value, b, model)
    return value


def tn_apply(family: TnFamily, args: Sequence[Functional]) -> Functional:
    """T̂_n(F₁,…,F_n) = Σ_P (ℏ/i)^{n−|P|} T_{|P|}(Z_{|I|}(F_I) : I ∈ P).

    T_k is the toy-exact k-fold ·_T product; the sum runs over set partitions
    whose blocks share contracted generators.
    """
    if not args:
        raise PreconditionError("tn_apply needs at least one argument")
    order = args[0].order
    for a in args:
        if not a.is_homogeneous():
            raise GradingError("T_n arguments must be homogeneous in parity")
    Z = family.Z
    parities = [a.parity() for a in args]
    n = len(args)
    total = []
    for partition in _linked_partitions([frozenset(Z.generators(a)) for a in args], Z):
        blocks = [_z_block(Z, [args[i] for i in block]) for block in partition]
        if any(not b for b in blocks):
            continue
        perm = [i for block in partition for i in block]
        power = n - len(partition)
        weight = HbarSeries.monomial((-I_UNIT) ** power, power, order)
        value = _ordered_product(blocks, family.model, order).scale(weight)
        total.append(value.scale(_koszul_sign(parities, perm)))
    return Functional.sum(total, order)


def _block_functional(block: Monomial, order: int) -> Functional:
    return Functional({block: HbarSeries.one(order)}, order)


def evaluate_tensor(tensor: MultilocalTensor, family: TnFamily) -> Functional:
    """⊕T̂_n applied factor by factor."""
    order = tensor.order
    out = []
    for key, c in tensor.terms.items():
        if not key:
            out.append(Functional({UNIT_MONOMIAL: c}, order))
            continue
        out.append(tn_apply(family, [_block_functional(b, order) for b in key]).scale(c))
    return Functional.sum(out, order)


def lift(F: Functional, family: TnFamily) -> MultilocalTensor:
    """The tensor of a renormalized-time-ordered functional: β(T_ren⁻¹F).

    Its factors sit at distinct sites, where every Z_m vanishes, so evaluating
    it gives F back for any Z.
    """
    return beta_decompose(tren_inverse(F, family))


def lift_series(F: CouplingSeries, family: TnFamily) -> TensorSeries:
    return [lift(c, family) for c in F.components]


def _as_tensor(A: Union[Functional, MultilocalTensor], family: TnFamily) -> MultilocalTensor:
    return A if isinstance(A, MultilocalTensor) else lift(A, family)


def tren_apply(F: Functional, family: TnFamily) -> Functional:
    """T_ren = (⊕T_n)∘β. Antifields ride along as spectators, so vector fields are time-ordered coefficient-wise."""
    return evaluate_tensor(beta_decompose(F), family)


def tren_inverse(F: Functional, family: TnFamily) -> Functional:
    G = F
    for _ in range(F.order + 1):
        correction = F - tren_apply(G, family)
        if not correction:
            break
        G = G + correction
    return G


def tren_product_tensor(A: Union[Functional, MultilocalTensor], B: Union[Functional, MultilocalTensor],
                        family: TnFamily) -> MultilocalTensor:
    """A ·_{T_ren} B kept as a tensor."""
    return tensor_product(_as_tensor(A, family), _as_tensor(B, family))


def tren_product(A: Union[Functional, MultilocalTensor], B: Union[Functional, MultilocalTensor],
                 family: TnFamily) -> Functional:
    """A ·_{T_ren} B = ⊕T̂_n(lift A ⊗ lift B)."""
    return evaluate_tensor(tren_product_tensor(A, B, family), family)


def tren_multiply(factors: Sequence[Union[Functional, MultilocalTensor]], family: TnFamily) -> Functional:
    """F₁ ·_{T_ren} … ·_{T_ren} F_n; for local factors this is T̂_n(F₁,…,F_n)."""
    if not factors:
        raise PreconditionError("tren_multiply needs at least one factor")
    tensor = _as_tensor(factors[0], family)
    for F in factors[1:]:
        tensor = tensor_product(tensor, _as_tensor(F, family))
    return evaluate_tensor(tensor, family)


def _bracket_keys(P: TensorKey, Q: TensorKey) -> Iterator[Tuple[int, TensorKey]]:
    """Elementary terms of {m(P), m(Q)} with the two contracted factors merged into one."""
    sign_p = -1 if sum(b.parity for b in P) % 2 else 1
    for i, a_block in enumerate(P):
        before_a = sum(b.parity for b in P[:i]) % 2
        after_a = sum(b.parity for b in P[i + 1:]) % 2
        for j, b_block in enumerate(Q):
            if b_block.sites != a_block.sites:
                continue
            before_b = sum(b.parity for b in Q[:j]) % 2
            fields = {g.partner() if g.is_antifield else g for g in a_block.generators | b_block.generators}
            for a in sorted(fields, key=lambda g: g.key):
                anti = a.partner()
                eps1 = sign_p if a.odd else 1
                eps2 = 1 if a.odd else sign_p
                for left, right, eps in ((anti, a, eps1), (a, anti, eps2)):
                    f1, a_rest = mono_derivative(a_block, left)
                    if a_rest is None:
                        continue
                    f2, b_rest = mono_derivative(b_block, right)
                    if b_rest is None:
                        continue
                    sign = eps * f1 * f2
                    if left.odd and before_a:
                        sign = -sign
                    if right.odd and before_b:
                        sign = -sign
                    if b_rest.parity and (after_a + before_b) % 2:
                        sign = -sign
                    s, merged = mono_mul(a_rest, b_rest)
                    if merged is None:
                        continue
                    s2, key = _canonical(P[:i] + (merged,) + P[i + 1:] + Q[:j] + Q[j + 1:])
                    if key is None:
                        continue
                    yield sign * s * s2, key


def bracket_tensor(s: MultilocalTensor, t: MultilocalTensor) -> MultilocalTensor:
    """{s, t} on tensors: each antifield/field pair of factors at one site merges into one factor."""
    s._check(t)
    terms: Dict[TensorKey, HbarSeries] = {}
    for kp, cp in s.terms.items():
        for kq, cq in t.terms.items():
            for sign, key in _bracket_keys(kp, kq):
                _accumulate(terms, key, (cp * cq).scale(sign))
    return MultilocalTensor(terms, s.order)


def bracket_tensor_series(s: TensorSeries, t: TensorSeries) -> TensorSeries:
    return _convolve_tensors(s, t, bracket_tensor)


def tren_bracket(A: Union[Functional, MultilocalTensor], B: Union[Functional, MultilocalTensor],
                 family: TnFamily) -> Functional:
    """{A, B}_{T_ren} = ⊕T̂_n({lift A, lift B}); for Z = id this is {A, B}_T."""
    return evaluate_tensor(bracket_tensor(_as_tensor(A, family), _as_tensor(B, family)), family)


def _series_tren_bracket(P: CouplingSeries, Q: CouplingSeries, family: TnFamily) -> CouplingSeries:
    carried = bracket_tensor_series(lift_series(P, family), lift_series(Q, family))
    return CouplingSeries([evaluate_tensor(t, family) for t in carried])


def _local_pieces(V: Functional) -> List[Functional]:
    pieces: Dict[int, Dict[Monomial, HbarSeries]] = {}
    for mono, c in V.terms.items():
        if len(mono.sites) != 1:
            raise NotMultilocalError(f"interaction term {mono} is not supported at a single site")
        (site,) = mono.sites
        pieces.setdefault(site, {})[mono] = c
    return [Functional(terms, V.order) for _, terms in sorted(pieces.items())]


def renormalized_smatrix_stored(V: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """Ŝ(V) = e_T^{iZ(V)/ℏ}, stored with λ^k scaled by ℏ^k."""
    require_window(family.model, V)
    _, tp = model_products(family.model)
    ZV = family.Z.apply(interaction_series(V, orders))
    return series_exp(stored_exponent(ZV, orders), tp)


def tren_exponential(V: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """e_{T_ren}^{iV/ℏ} as Σ_n T̂_n(V^{⊗n})/n! in the carried product, stored like Ŝ."""
    require_window(family.model, V)
    series = interaction_series(V, orders)
    W = orders.working_order
    exponent = [MultilocalTensor.zero(W)]
    for n in range(1, series.v_order + 1):
        exponent.append(lift(series[n].pad(W).shift(n - 1).scale(I_UNIT), family))
    one = [MultilocalTensor.one(W)] + [MultilocalTensor.zero(W)] * series.v_order
    result, term = one, one
    for j in range(1, series.v_order + 1):
        term = [t.scale(rational_scalar(1, j)) for t in _convolve_tensors(term, exponent, tensor_product)]
        result = [a + b for a, b in zip(result, term)]
    return CouplingSeries([evaluate_tensor(t, family) for t in result])


def smatrix_from_tn(V: Functional, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """Σ_n (i/ℏ)^n/n! T̂_n(V,…,V) for a local V, in the same stored normalization."""
    require_window(family.model, V)
    W = orders.working_order
    pieces = _local_pieces(V.pad(W))
    comps = [Functional.one(W)]
    for n in range(1, orders.v_order + 1):
        total = Functional.sum((tn_apply(family, list(args)) for args in cartesian(pieces, repeat=n)), W)
        comps.append(total.scale(I_UNIT ** n * factorial_inverse(n)))
    return CouplingSeries(comps)


# ---------------------------------------------------------------------------
# Dressing by the interaction
# ---------------------------------------------------------------------------

def dress_tensor(V: CouplingSeries, tensor: MultilocalTensor, family: TnFamily) -> CouplingSeries:
    """Φ_V(L₁⊗…⊗L_k) = Σ_P ± (ℏ/i)^{k−|P|} Π_{J∈P} Z^{(|J|)}_V(L_J), the product taken in ·_T.

    e_{T_ren}^{iV/ℏ} ·_{T_ren} t = e_T^{iZ(V)/ℏ} ·_T Φ_V(t); Φ_0 is ⊕T̂_n.
    """
    Z = family.Z
    N, M = V.hbar_order, V.v_order
    if Z.is_identity:
        return CouplingSeries.constant(evaluate_tensor(tensor, family), M)
    _, tp = model_products(family.model)
    groups: Dict[TensorKey, CouplingSeries] = {}

    def group_value(blocks: TensorKey) -> CouplingSeries:
        if blocks not in groups:
            k = len(blocks)
            weight = HbarSeries.monomial((-I_UNIT) ** (k - 1), k - 1, N)
            value = Z.derivative(V, [_block_functional(b, N) for b in blocks])
            groups[blocks] = value.scale(weight)
        return groups[blocks]

    one = CouplingSeries.constant(Functional.one(N), M)
    total = CouplingSeries.zero(N, M)
    for key, c in tensor.terms.items():
        parities = [b.parity for b in key]
        gen_sets = [frozenset(g for g in b.generators if Z.contracts(g)) for b in key]
        for partition in _linked_partitions(gen_sets, Z):
            value = one
            for block in partition:
                value = value.convolve(group_value(tuple(key[i] for i in block)), tp)
                if value.is_zero():
                    break
            if value.is_zero():
                continue
            sign = _koszul_sign(parities, [i for block in partition for i in block])
            total = total + value.scale(c if sign > 0 else -c)
    return total


def _dress_series(V: CouplingSeries, tensors: TensorSeries, family: TnFamily) -> CouplingSeries:
    total = CouplingSeries.zero(V.hbar_order, V.v_order)
    for k, t in enumerate(tensors):
        if t:
            total = total + dress_tensor(V, t, family).shifted(k)
    return total


def dress(V: SeriesLike, X: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """Φ_V(lift X); for a single local X this is Z^{(1)}_V(X)."""
    series = interaction_series(V, orders)
    return _dress_series(series, lift_series(operand_series(X, orders), family), family)


def undress(V: SeriesLike, G: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """Solve Φ_V(lift Y) = G; Φ_V∘lift − id raises the ℏ order, so the iteration is finite."""
    series = interaction_series(V, orders)
    Gs = operand_series(G, orders)
    if family.Z.is_identity:
        return Gs
    Y = Gs
    for _ in range(orders.hbar_order + 1):
        nxt = Gs - (_dress_series(series, lift_series(Y, family), family) - Y)
        if nxt == Y:
            break
        Y = nxt
    return Y


# ---------------------------------------------------------------------------
# Anomalous Master Ward identity
# ---------------------------------------------------------------------------

@dataclass
class AnomalyResult:
    value: CouplingSeries
    support: FrozenSet[int]
    leading_hbar_order: Optional[int]
    induced: Optional[CouplingSeries] = None

    @property
    def functional(self) -> Functional:
        return self.value.at_coupling()


def leading_hbar_order(series: CouplingSeries) -> Optional[int]:
    orders = [c.leading_hbar_order() for c in series.components]
    orders = [o for o in orders if o is not None]
    return min(orders) if orders else None


def _free_action(model: Model, order: int, free_action: Optional[Functional]) -> Functional:
    if free_action is None:
        return model.S0(order)
    return free_action.pad(order)


def _total_action(series: CouplingSeries, model: Model, orders: PerturbativeOrders,
                  free_action: Optional[Functional]) -> CouplingSeries:
    S = _free_action(model, orders.hbar_order, free_action)
    return CouplingSeries.constant(S, orders.v_order) + series


def _conjugated(V: CouplingSeries, D: CouplingSeries, family: TnFamily, orders: PerturbativeOrders,
                subtract_qme: bool = True, free_action: Optional[Functional] = None) -> CouplingSeries:
    """E⁻¹·_T({E·_T D, S₀}_⋆ − {E, S₀}_⋆·_T D) with E = e_T^{iZ(V)/ℏ}; the second term only when subtracting."""
    model = family.model
    _, tp = model_products(model)
    S = _free_action(model, orders.working_order, free_action)
    ZV = family.Z.apply(V)
    E = series_exp(stored_exponent(ZV, orders), tp)
    E_bar = series_exp(stored_exponent(ZV, orders, -I_UNIT), tp)
    Ds = scale_up(D, orders)
    koszul_star = lambda F: antibracket(F, S, model, 'star')
    inner = E.convolve(Ds, tp).map(koszul_star)
    if subtract_qme:
        inner = inner - E.map(koszul_star).convolve(Ds, tp)
    return unscale(E_bar.convolve(inner, tp), orders)


def anomaly_extract(V: SeriesLike, X: SeriesLike, family: TnFamily, orders: PerturbativeOrders,
                    free_action: Optional[Functional] = None) -> AnomalyResult:
    """△_V(X) from the anomalous Master Ward identity, for X a sum of single-site vector fields.

    With E = e_T^{iZ(V)/ℏ}, △_V(X) is the functional whose dressing is
    Φ_V({X, V+S₀}) − E⁻¹·_T({E·_T Φ_V X, S₀}_⋆ − {E, S₀}_⋆·_T Φ_V X), the
    bracket carried in tensor form. Without counterterms it is iℏ△X; what
    Z adds on top must live on supp X ∩ supp V.
    """
    model = family.model
    require_window(model, V, X)
    series = interaction_series(V, orders)
    Xs = operand_series(X, orders)
    hbar_i = i_hbar(orders.hbar_order)
    laplacian = Xs.map(lambda F: bv_laplacian(F).scale(hbar_i))
    induced = CouplingSeries.zero(orders.hbar_order, orders.v_order)
    value = laplacian
    if not family.Z.is_identity and not Xs.is_zero():
        total = _total_action(series, model, orders, free_action)
        carried = bracket_tensor_series(lift_series(Xs, family), lift_series(total, family))
        dressed = dress(series, Xs, family, orders)
        ward = _conjugated(series, dressed, family, orders, free_action=free_action)
        value = undress(series, _dress_series(series, carried, family) - ward, family, orders)
        induced = value - laplacian
        allowed = Xs.support() & series.support()
        for k, comp in enumerate(induced.components):
            escaped = comp.support() - allowed
            if escaped:
                raise AnomalyLocalityError(
                    f"anomaly at λ^{k} reaches sites {sorted(escaped)} outside {sorted(allowed)}", order=k)
    support = value.support()
    logger.debug(f"anomaly supported on {sorted(support)}")
    return AnomalyResult(value, support, leading_hbar_order(value), induced)


def qme_ren_residual(V: SeriesLike, family: TnFamily, orders: PerturbativeOrders,
                     free_action: Optional[Functional] = None) -> CouplingSeries:
    """½{V+S₀, V+S₀}_{T_ren} − △_V(V), with △_V set to zero on the antifield-free part of V."""
    series = interaction_series(V, orders)
    total = _total_action(series, family.model, orders, free_action)
    residual = _series_tren_bracket(total, total, family).scale(HALF)
    with_af = series.map(lambda F: F.with_antifields())
    if with_af.is_zero():
        return residual
    return residual - anomaly_extract(series, with_af, family, orders, free_action).value


def qbv_ren(X: SeriesLike, V: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """ŝX = {X, V+S₀}_{T_ren} − △_V(X)."""
    series = interaction_series(V, orders)
    Xs = operand_series(X, orders)
    total = _total_action(series, family.model, orders, None)
    return _series_tren_bracket(Xs, total, family) - anomaly_extract(series, Xs, family, orders).value


def qbv_ren_direct(X: SeriesLike, V: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """ŝX as the undressing of e_T^{−iZ(V)/ℏ}·_T {e_T^{iZ(V)/ℏ}·_T Φ_V X, S₀}_⋆.

    Nilpotent whenever the renormalized master equation holds; it agrees with
    :func:`qbv_ren` on local X.
    """
    require_window(family.model, V, X)
    series = interaction_series(V, orders)
    dressed = dress(series, X, family, orders)
    return undress(series, _conjugated(series, dressed, family, orders, subtract_qme=False), family, orders)


def tren_retarded_map(V: SeriesLike, G: SeriesLike, family: TnFamily, orders: PerturbativeOrders) -> CouplingSeries:
    """R_V(G) = Ŝ(V)^{⋆−1} ⋆ (Ŝ(V) ·_T Φ_V G)."""
    model = family.model
    require_window(model, V, G)
    st, tp = model_products(model)
    series = interaction_series(V, orders)
    E = renormalized_smatrix_stored(series, family, orders)
    Ys = scale_up(dress(series, G, family, orders), orders)
    stored = series_inverse(E, st).convolve(E.convolve(Ys, tp), st)
    return unscale(stored, orders)


@dataclass
class WessZuminoResult:
    holds: bool
    lhs: CouplingSeries
    rhs: CouplingSeries


def wess_zumino_check(V: SeriesLike, Y: Functional, family: TnFamily, orders: PerturbativeOrders) -> WessZuminoResult:
    """For X = {Y, V+S₀}_{T_ren}: {△_V X, V+S₀}_{T_ren} = −△_V(△_V X) at ℏ⁰ and ℏ¹."""
    series = interaction_series(V, orders)
    total = _total_action(series, family.model, orders, None)
    X = _series_tren_bracket(operand_series(Y, orders), total, family)
    closure = _series_tren_bracket(X, total, family)
    if any(c.hbar_coefficient(0) or c.hbar_coefficient(1) for c in closure.components):
        raise PreconditionError("{X, V+S0}_Tren does not vanish; the action fails the master equation classically")
    anomaly = anomaly_extract(series, X, family, orders).value
    lhs = _series_tren_bracket(anomaly, total, family)
    rhs = -anomaly_extract(series, anomaly, family, orders).value
    holds = all(a.hbar_coefficient(k) == b.hbar_coefficient(k)
                for a, b in zip(lhs.components, rhs.components) for k in (0, 1))
    return WessZuminoResult(holds, lhs, rhs)


# ---------------------------------------------------------------------------
# Anomaly absorption
# ---------------------------------------------------------------------------

@dataclass
class AbsorptionResult:
    absorbed: bool
    corrections: Dict[int, Functional]
    action: Functional
    residual: Functional
    obstruction: Optional[Functional] = None
    obstruction_order: Optional[int] = None


def _absorption_basis(S1: Functional, target: Functional, degree_bound: int) -> List[Functional]:
    sites = sorted(S1.support() | target.support())
    species = {}
    for g in S1.generators() | target.generators():
        base = g.species.base if g.is_antifield else g.species
        species[base.name] = base
    gens = [Generator(sp, x) for _, sp in sorted(species.items()) for x in sites]
    gens += [Generator(sp.antifield(), x) for _, sp in sorted(species.items()) for x in sites]
    ghosts = S1.ghost_numbers() or frozenset({0})
    basis, seen = [], set()
    for degree in range(1, degree_bound + 1):
        for combo in combinations_with_replacement(gens, degree):
            F = Functional.from_product(combo, 0)
            if not F:
                continue
            (mono,) = F.terms
            if mono in seen or mono.parity or mono.ghost_number not in ghosts:
                continue
            seen.add(mono)
            basis.append(Functional({mono: HbarSeries.one(0)}, 0))
    return basis


def _solve_coefficients(target: Functional, images: Sequence[Functional]) -> Optional[List[Scalar]]:
    """Exact coefficients c with Σ c_j images_j = target, or None."""
    monos = sorted({m for img in images for m in img.terms} | set(target.terms), key=_mono_key)
    if not monos:
        return [QQ_I(0)] * len(images)
    index = {m: r for r, m in enumerate(monos)}
    cols = len(images) + 1
    rows = [[QQ_I(0)] * cols for _ in monos]
    for j, img in enumerate(images):
        for m, c in img.terms.items():
            rows[index[m]][j] = c.coeffs[0]
    for m, c in target.terms.items():
        rows[index[m]][-1] = c.coeffs[0]
    reduced, pivots = DomainMatrix(rows, (len(monos), cols), QQ_I).rref()
    logger.debug(f"linear system {len(monos)}x{len(images)}, rank {len(pivots)}")
    if len(images) in pivots:
        return None
    dense = reduced.to_Matrix()
    coefficients = [QQ_I(0)] * len(images)
    for r, p in enumerate(pivots):
        coefficients[p] = scalar(dense[r, cols - 1])
    return coefficients


def _solve_coboundary(target: Functional, s, basis: Sequence[Functional]) -> Optional[Functional]:
    """Exact solution W of s(W) = target in span(basis), or None."""
    coefficients = _solve_coefficients(target, [s(b) for b in basis])
    if coefficients is None:
        return None
    return Functional.sum((b.scale(c) for b, c in zip(basis, coefficients) if c), 0)


def _residual_at_unit_coupling(action: Functional, family: TnFamily, orders: PerturbativeOrders) -> Functional:
    return qme_ren_residual(CouplingSeries.linear(action, orders.v_order), family, orders).at_coupling()


def absorb_anomaly(S1: Functional, family: TnFamily, orders: PerturbativeOrders,
                   degree_bound: int = 3) -> AbsorptionResult:
    """Find W = S₁ + Σ_n ℏⁿ W_n with vanishing renormalized master-equation residual at λ = 1.

    At order ℏⁿ the correction solves {W_n, S₀+S₁} = −c_n, c_n being the ℏⁿ
    coefficient of the residual so far, over even window-local monomials of
    bounded degree. If c_n has no preimage it is returned as the obstruction.
    The residual is the ½-normalized one of :func:`qme_ren_residual`.
    """
    model = family.model
    if orders.v_order < 2:
        raise PreconditionError("anomaly absorption needs v_order >= 2 to see the quadratic bracket")
    require_window(model, S1)
    N = orders.hbar_order
    total = model.S0(N) + S1
    cme = tren_bracket(total, total, family).hbar_coefficient(0)
    if cme:
        raise PreconditionError(f"S1 does not solve the classical master equation: {cme.pretty()}")
    classical = total.pad(0)
    s = lambda F: antibracket(F, classical)

    corrections: Dict[int, Functional] = {}
    action = S1
    residual = _residual_at_unit_coupling(action, family, orders)
    for n in range(1, N + 1):
        c_n = residual.hbar_coefficient(n).pad(0)
        if not c_n:
            continue
        if s(c_n):
            raise PreconditionError(f"Wess–Zumino consistency fails at ℏ^{n}: s(c_{n}) = {s(c_n).pretty()}")
        W_n = _solve_coboundary(-c_n, s, _absorption_basis(S1.pad(0), c_n, degree_bound))
        if W_n is None:
            logger.info(f"anomaly at ℏ^{n} is not s-exact within degree {degree_bound}")
            return AbsorptionResult(False, corrections, action, residual, c_n, n)
        corrections[n] = W_n
        action = action + W_n.pad(N).shift(n)
        residual = _residual_at_unit_coupling(action, family, orders)
        logger.debug(f"absorbed ℏ^{n}: W_{n} = {W_n.pretty()}")
    return AbsorptionResult(residual.is_zero(), corrections, action, residual)


@dataclass
class RedefinitionResult:
    Z: RenMap
    residual: Functional
    equivalent: bool
    shifts: Dict[Tuple[int, int], Scalar] = field(default_factory=dict)


def redefine_renormalization(result: AbsorptionResult, S1: Functional, family: TnFamily,
                             orders: PerturbativeOrders) -> RedefinitionResult:
    """Trade the corrections W − S₁ for a change of kernels κ_n → κ_n + Σ_p δ_{n,p}ℏ^p.

    At each ℏ^p the shifts solve s(Σ_n δ_{n,p} T_n) = s(D_p), where
    T_n = Σ_g (∂_g^d S₁)^n/n! and D_p is the ℏ^p part of Z(W) − Z(S₁). The new
    family is accepted when S₁ alone solves its renormalized master equation.
    """
    if not result.absorbed:
        raise PreconditionError("only an absorbed anomaly can be traded for a change of Z")
    Z, model = family.Z, family.model
    N = orders.hbar_order
    classical = (model.S0(N) + S1).pad(0)
    s = lambda F: antibracket(F, classical)
    arities = sorted(set(Z.kernels) | {2})
    bare = S1.pad(0)
    images = []
    for n in arities:
        candidate = Functional.sum((_power(Z.differentiate(bare, g), n) for g in Z.generators(bare)), 0)
        images.append(s(candidate.scale(factorial_inverse(n))))
    D = Z.apply(result.action) - Z.apply(S1.pad(N))
    kernels = {n: k.pad(N) for n, k in Z.kernels.items()}
    shifts: Dict[Tuple[int, int], Scalar] = {}
    for p in range(1, N + 1):
        target = s(D.hbar_coefficient(p).pad(0))
        if not target:
            continue
        coefficients = _solve_coefficients(target, images)
        if coefficients is None:
            logger.info(f"ℏ^{p} correction is not a change of the kernels {arities}")
            return RedefinitionResult(Z, _residual_at_unit_coupling(S1, family, orders), False, shifts)
        for n, c in zip(arities, coefficients):
            if c:
                shifts[(n, p)] = c
                kernels[n] = kernels.get(n, HbarSeries.zero(N)) + HbarSeries.monomial(c, p, N)
    redefined = RenMap(kernels, name=f"{Z.name}'", depth=Z.depth, species=Z.species)
    residual = _residual_at_unit_coupling(S1, make_tn_family(model, redefined), orders)
    logger.debug(f"{redefined.name}: kernel shifts {shifts}, residual {residual.pretty()}")
    return RedefinitionResult(redefined, residual, residual.is_zero(), shifts)


# ---------------------------------------------------------------------------
# Adiabatic master equation and renormalization-group covariance
# ---------------------------------------------------------------------------

def interaction_lagrangian(model: Model, V: Functional, name: str = 'L1') -> Lagrangian:
    """Spread V over sites: each monomial is weighted by f at its earliest site."""
    def density(t: int) -> Functional:
        return V.filter(lambda m: bool(m.sites) and min(m.sites) == t)

    return density_lagrangian(model, density, V.order, name)


@dataclass
class AdiabaticSample:
    f: TestVector
    f1: TestVector
    residual_support: FrozenSet[int]
    boundary: FrozenSet[int]
    contained: bool
    interior_agrees: bool


@dataclass
class AdiabaticReport:
    contained: bool
    samples: List[AdiabaticSample] = field(default_factory=list)


def _nested_cutoffs(model: Model, rng: random.Random, samples: int) -> List[Tuple[TestVector, TestVector]]:
    window = sorted(model.window)
    ones = tuple(1 for _ in model.sites)
    pairs = [(ones, cutoff_indicator(model, window))]
    for _ in range(samples):
        a, b = sorted(rng.sample(range(len(window) + 1), 2))
        inner = window[a:b]
        outer = model.closed_neighborhood(inner) | frozenset(rng.sample(list(model.sites), 1))
        pairs.append((cutoff_indicator(model, outer), cutoff_indicator(model, inner)))
    return pairs


def adiabatic_qme_check(L0: Lagrangian, L1: Lagrangian, family: TnFamily, orders: PerturbativeOrders,
                        samples: int = 6, seed: int = 0) -> AdiabaticReport:
    """(ℏ/i)·Ŝ(L₁(f₁))⁻¹·_T{Ŝ(L₁(f₁)), L₀(f)}_⋆ must live on the stencil of supp df ∪ supp df₁.

    Each sample also compares, away from that boundary, whether the residual
    and the anomaly form ½{L₀+L₁, L₀+L₁}_{T_ren} − △(L₁) vanish together.
    """
    model = family.model
    rng = random.Random(seed)
    _, tp = model_products(model)
    report = AdiabaticReport(True)
    for f, f1 in _nested_cutoffs(model, rng, samples):
        V = L1(f1)
        if not V.support() <= model.window:
            continue
        S = L0(f).pad(orders.working_order)
        ZV = family.Z.apply(interaction_series(V, orders))
        E = series_exp(stored_exponent(ZV, orders), tp)
        E_bar = series_exp(stored_exponent(ZV, orders, -I_UNIT), tp)
        bracket = E.map(lambda Y: antibracket(Y, S, model, 'star'))
        residual = unscale(E_bar.convolve(bracket, tp), orders, offset=1, factor=I_UNIT)
        boundary = model.closed_neighborhood(supp_df(model, f) | supp_df(model, f1))
        support = residual.support()
        contained = support <= boundary
        interior = frozenset(model.sites) - boundary
        anomaly_form = qme_ren_residual(V, family, orders, free_action=L0(f).pad(orders.hbar_order))
        clean_residual = all(not c.restrict(interior) for c in residual.components)
        clean_anomaly = all(not c.restrict(interior) for c in anomaly_form.components)
        report.samples.append(AdiabaticSample(f, f1, support, boundary, contained, clean_residual == clean_anomaly))
        if not contained:
            report.contained = False
            logger.debug(f"adiabatic residual escapes to {sorted(support - boundary)}")
    return report


@dataclass
class RGCovarianceReport:
    passed: bool
    support_ok: bool
    intertwining_ok: bool
    failures: List[str] = field(default_factory=list)


def local_field(model: Model, rng: random.Random, order: int, sites: Optional[Sequence[int]] = None,
                species: Optional[Sequence[str]] = None, max_antifields: int = 1) -> Functional:
    """A parity-homogeneous sum of single-site random functionals."""
    chosen = sorted(model.window if sites is None else sites)
    pieces = [random_functional(model, rng, order, sites=[x], species=species, max_antifields=max_antifields)
              for x in chosen if rng.random() < 0.7]
    even, odd = Functional.sum(pieces, order).parity_parts()
    return odd if odd and (not even or rng.random() < 0.5) else even


def rg_covariance_check(S1: Functional, Z: RenMap, model: Model, orders: PerturbativeOrders,
                        samples: int = 4, seed: int = 0) -> RGCovarianceReport:
    """Covariance of the master equation and of ŝ under a finite renormalization Z.

    (a) the adiabatic residual of the Z-family stays on the cutoff boundary;
    (b) Φ_{S₁} ∘ ŝ′_{S₁} = ŝ_{Z(S₁)} ∘ Φ_{S₁} on random local vector fields.
    """
    base = make_tn_family(model)
    if not qme_ren_residual(S1, base, orders).is_zero():
        raise PreconditionError("S1 does not solve the master equation of the unrenormalized family")
    family = make_tn_family(model, Z)
    failures: List[str] = []

    L0 = free_lagrangian(model, orders.hbar_order)
    adiabatic = adiabatic_qme_check(L0, interaction_lagrangian(model, S1), family, orders, samples, seed)
    if not adiabatic.contained:
        failures.append("adiabatic residual leaves the cutoff boundary")

    rng = random.Random(seed)
    series = interaction_series(S1, orders)
    Z_series = Z.apply(series)
    names = [sp.name for sp in model.propagating]
    for _ in range(samples):
        X = local_field(model, rng, orders.hbar_order, species=names)
        renormalized = dress(series, qbv_ren(X, series, family, orders), family, orders)
        plain = qbv_hat(dress(series, X, family, orders), Z_series, model, orders)
        diff = renormalized - plain
        for k, comp in enumerate(diff.components):
            if comp:
                failures.append(f"intertwining fails at λ^{k}: {comp.pretty()}")
                break
    intertwining_ok = not any(f.startswith("intertwining") for f in failures)
    return RGCovarianceReport(not failures, adiabatic.contained, intertwining_ok, failures)
