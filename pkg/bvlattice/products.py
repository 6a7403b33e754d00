"""
Non-renormalized quantum products on a lattice model.

All products are exponentiated bidifferential operators over the propagating
species: each contraction of a pair of generators costs one power of ℏ, so at
truncation N the exponentials are finite sums.

Perturbative expansions in the interaction are carried as
:class:`CouplingSeries` (components indexed by the power of the coupling λ).
Exponentials of iV/ℏ are built in a *stored* normalization where the λ^k
component is multiplied by ℏ^k; this keeps every intermediate coefficient a
nonnegative power of ℏ. :func:`unscale` divides the factor back out and fails
loudly if a negative power would survive.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple, Union

from bvlattice.errors import (
    GradingError,
    PreconditionError,
    SupportError,
    TruncationMismatchError,
)
from bvlattice.graded_core import (
    I_UNIT,
    ONE,
    Functional,
    Generator,
    HbarSeries,
    Monomial,
    factorial_inverse,
    mono_derivative,
    mono_mul,
    pointwise_product,
    rational_scalar,
    scalar,
)
from bvlattice.lattice_model import Kernel, Model

logger = logging.getLogger(__name__)

HALF = rational_scalar(1, 2)

Product = Callable[[Functional, Functional], Functional]


@dataclass(frozen=True)
class PerturbativeOrders:
    """Double truncation: ℏ up to hbar_order, the coupling λ up to v_order."""

    hbar_order: int
    v_order: int

    def __post_init__(self):
        if self.hbar_order < 0 or self.v_order < 0:
            raise PreconditionError(f"orders must be non-negative, got ({self.hbar_order}, {self.v_order})")

    @property
    def working_order(self) -> int:
        """ℏ order kept for stored (ℏ^k-scaled) intermediate series."""
        return self.hbar_order + self.v_order


# ---------------------------------------------------------------------------
# Exponentiated bidifferential operators
# ---------------------------------------------------------------------------

def _contractible(g: Generator) -> bool:
    return g.species.propagating and not g.is_antifield


def _accumulate(target: Dict, key, value: HbarSeries):
    prev = target.get(key)
    target[key] = value if prev is None else prev + value


def exponentiated_pairing(F: Functional, G: Functional, kernel: Kernel, coefficient) -> Functional:
    """m ∘ exp(coefficient·ℏ·Σ κ(x,y) ∂_x ⊗ ∂_y)(F ⊗ G) over the propagating species."""
    if F.order != G.order:
        raise TruncationMismatchError(F.order, G.order)
    order = F.order
    coefficient = scalar(coefficient)
    layer: Dict[Tuple[Monomial, Monomial], HbarSeries] = {}
    for u, a in F.terms.items():
        for v, b in G.terms.items():
            _accumulate(layer, (u, v), a * b)

    out: Dict[Monomial, HbarSeries] = {}
    k = 0
    while layer:
        weight = coefficient ** k * factorial_inverse(k)
        for (u, v), c in layer.items():
            sign, w = mono_mul(u, v)
            if w is None:
                continue
            _accumulate(out, w, c.scale(weight * scalar(sign)).shift(k))
        k += 1
        if k > order:
            break
        nxt: Dict[Tuple[Monomial, Monomial], HbarSeries] = {}
        for (u, v), c in layer.items():
            for g, m in u.factors:
                if not _contractible(g):
                    continue
                for h, n in v.factors:
                    if h.species != g.species:
                        continue
                    value = kernel(g.site, h.site)
                    if not value:
                        continue
                    _, du = mono_derivative(u, g)
                    _, dv = mono_derivative(v, h)
                    _accumulate(nxt, (du, dv), c.scale(scalar(m * n) * value))
        layer = nxt
    return Functional(out, order)


def exponentiated_laplacian(F: Functional, kernel: Kernel, coefficient) -> Functional:
    """exp(coefficient·ℏ·½ Σ κ(x,y) ∂_x ∂_y) F over the propagating species."""
    order = F.order
    coefficient = scalar(coefficient)
    layer: Dict[Monomial, HbarSeries] = dict(F.terms)
    out: Dict[Monomial, HbarSeries] = {}
    k = 0
    while layer:
        weight = coefficient ** k * factorial_inverse(k)
        for u, c in layer.items():
            _accumulate(out, u, c.scale(weight).shift(k))
        k += 1
        if k > order:
            break
        nxt: Dict[Monomial, HbarSeries] = {}
        for u, c in layer.items():
            for g, m in u.factors:
                if not _contractible(g):
                    continue
                _, du = mono_derivative(u, g)
                for h, n in du.factors:
                    if h.species != g.species:
                        continue
                    value = kernel(g.site, h.site)
                    if not value:
                        continue
                    _, ddu = mono_derivative(du, h)
                    _accumulate(nxt, ddu, c.scale(HALF * scalar(m * n) * value))
        layer = nxt
    return Functional(out, order)


# ---------------------------------------------------------------------------
# The binary products and the time-ordering operator
# ---------------------------------------------------------------------------

def star(F: Functional, G: Functional, model: Model) -> Functional:
    """F ⋆ G = m ∘ exp(iℏΓ_Δ)(F⊗G), Γ_Δ = ½ Σ Δ(x,y) ∂_x⊗∂_y."""
    return exponentiated_pairing(F, G, model.kernel_delta, I_UNIT * HALF)


def tprod(F: Functional, G: Functional, model: Model) -> Functional:
    """F ·_T G = m ∘ exp(iℏ Σ Δ_D(x,y) ∂_x⊗∂_y)(F⊗G)."""
    return exponentiated_pairing(F, G, model.kernel_delta_d, I_UNIT)


def time_order(F: Functional, model: Model, direction: str = 'forward') -> Functional:
    """T = exp(iℏ·½ Σ Δ_D ∂∂) and its inverse."""
    if direction == 'forward':
        return exponentiated_laplacian(F, model.kernel_delta_d, I_UNIT)
    if direction == 'inverse':
        return exponentiated_laplacian(F, model.kernel_delta_d, -I_UNIT)
    raise PreconditionError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def alpha_h(F: Functional, model: Model, direction: str = 'forward') -> Functional:
    """α_H = exp(ℏΓ_H), Γ_H = ½ Σ H(x,y) ∂_x∂_y."""
    sign = ONE if direction == 'forward' else -ONE
    return exponentiated_laplacian(F, model.kernel_h, sign)


def star_h(F: Functional, G: Functional, model: Model) -> Functional:
    """F ⋆_H G = α_H(α_H⁻¹F ⋆ α_H⁻¹G)."""
    return alpha_h(star(alpha_h(F, model, 'inverse'), alpha_h(G, model, 'inverse'), model), model)


def star_commutator(F: Functional, G: Functional, model: Model) -> Functional:
    return star(F, G, model) - star(G, F, model)


def peierls_bracket(F: Functional, G: Functional, model: Model) -> Functional:
    """⟨F^{(1)}, Δ G^{(1)}⟩ over the propagating species."""
    terms = []
    kernel = model.kernel_delta
    gens_g = [h for h in G.generators() if _contractible(h)]
    for g in F.generators():
        if not _contractible(g):
            continue
        dF = F.derivative(g)
        for h in gens_g:
            if h.species != g.species:
                continue
            value = kernel(g.site, h.site)
            if value:
                terms.append(pointwise_product(dF, G.derivative(h)).scale(value))
    return Functional.sum(terms, F.order)


def involution(F: Functional) -> Functional:
    """F*(φ) = conj(F(φ)) for real generators."""
    return F.conjugate()


def is_later(model: Model, F: Functional, G: Functional) -> bool:
    """Every site of F comes strictly after every site of G in the time order."""
    sf, sg = F.support(), G.support()
    return all(model.precedes(y, x) for x in sf for y in sg)


# ---------------------------------------------------------------------------
# Vector fields and the time-ordered derivation
# ---------------------------------------------------------------------------

def vector_field_action(Y: Functional, F: Functional) -> Functional:
    """∂_Y F = Σ_a (∂_{a‡} Y)·(∂_a F) for a vector field Y with one antifield per term."""
    terms = []
    for g in Y.generators():
        if not g.is_antifield:
            continue
        coefficient = Y.derivative(g)
        terms.append(pointwise_product(coefficient, F.derivative(g.partner())))
    return Functional.sum(terms, F.order)


def _require_vector_field(X: Functional):
    numbers = X.antifield_numbers()
    if numbers and numbers != {1}:
        raise PreconditionError(f"a vector field needs #af = 1 on every term, found {sorted(numbers)}")


def timeorder_vectorfield(X: Functional, model: Model, direction: str = 'forward') -> Functional:
    """T acting coefficient-wise on X = Σ X_x φ‡(x); antifields are spectators."""
    _require_vector_field(X)
    return time_order(X, model, direction)


def timeordered_derivation(Y: Functional, F: Functional, model: Model) -> Functional:
    """∂ᵀ_Y F = T⟨T⁻¹Y, (T⁻¹F)^{(1)}⟩."""
    _require_vector_field(Y)
    return time_order(vector_field_action(time_order(Y, model, 'inverse'), time_order(F, model, 'inverse')),
                      model)


# ---------------------------------------------------------------------------
# Coupling series
# ---------------------------------------------------------------------------

class CouplingSeries:
    """Σ_{k≤M} λ^k F_k with functional coefficients at a common ℏ truncation."""

    __slots__ = ('components',)

    def __init__(self, components: Sequence[Functional]):
        comps = tuple(components)
        if not comps:
            raise PreconditionError("a coupling series needs at least the λ⁰ component")
        order = comps[0].order
        for c in comps:
            if c.order != order:
                raise TruncationMismatchError(c.order, order)
        self.components = comps

    @classmethod
    def zero(cls, hbar_order: int, v_order: int) -> 'CouplingSeries':
        return cls([Functional.zero(hbar_order)] * (v_order + 1))

    @classmethod
    def constant(cls, F: Functional, v_order: int) -> 'CouplingSeries':
        return cls([F] + [Functional.zero(F.order)] * v_order)

    @classmethod
    def linear(cls, V: Functional, v_order: int) -> 'CouplingSeries':
        comps = [Functional.zero(V.order)] * (v_order + 1)
        if v_order >= 1:
            comps[1] = V
        return cls(comps)

    @property
    def hbar_order(self) -> int:
        return self.components[0].order

    @property
    def v_order(self) -> int:
        return len(self.components) - 1

    def __getitem__(self, k: int) -> Functional:
        if k < len(self.components):
            return self.components[k]
        return Functional.zero(self.hbar_order)

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CouplingSeries):
            return NotImplemented
        return self.components == other.components

    __hash__ = None

    def __repr__(self) -> str:
        parts = [f"λ^{k}: {c.pretty()}" for k, c in enumerate(self.components) if c]
        return f"CouplingSeries({'; '.join(parts) or '0'})"

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def _check(self, other: 'CouplingSeries'):
        if self.v_order != other.v_order:
            raise TruncationMismatchError(self.v_order, other.v_order)

    def __add__(self, other: 'CouplingSeries') -> 'CouplingSeries':
        self._check(other)
        return CouplingSeries([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: 'CouplingSeries') -> 'CouplingSeries':
        self._check(other)
        return CouplingSeries([a - b for a, b in zip(self.components, other.components)])

    def __neg__(self) -> 'CouplingSeries':
        return CouplingSeries([-a for a in self.components])

    def scale(self, factor) -> 'CouplingSeries':
        return CouplingSeries([a.scale(factor) for a in self.components])

    def map(self, fn: Callable[[Functional], Functional]) -> 'CouplingSeries':
        """Apply a λ-independent linear map component-wise."""
        return CouplingSeries([fn(a) for a in self.components])

    def convolve(self, other: 'CouplingSeries', product: Product) -> 'CouplingSeries':
        """Cauchy product in λ under a bilinear product, truncated at v_order."""
        self._check(other)
        M = self.v_order
        out = []
        for k in range(M + 1):
            terms = [product(self.components[a], other.components[k - a])
                     for a in range(k + 1) if self.components[a] and other.components[k - a]]
            out.append(Functional.sum(terms, self.hbar_order))
        return CouplingSeries(out)

    def pad(self, hbar_order: int) -> 'CouplingSeries':
        return CouplingSeries([a.pad(hbar_order) for a in self.components])

    def at_coupling(self, value=1) -> Functional:
        """Σ_k value^k F_k."""
        value = scalar(value)
        return Functional.sum((c.scale(value ** k) for k, c in enumerate(self.components)),
                              self.hbar_order)

    def support(self) -> frozenset:
        return frozenset().union(*(c.support() for c in self.components))

    def shifted(self, power: int = 1) -> 'CouplingSeries':
        """Multiply by λ^power (dropping what exceeds v_order)."""
        zero = Functional.zero(self.hbar_order)
        return CouplingSeries(([zero] * power + list(self.components))[:self.v_order + 1])


SeriesLike = Union[Functional, CouplingSeries]


def interaction_series(V: SeriesLike, orders: PerturbativeOrders) -> CouplingSeries:
    """Interpret V as an interaction: a bare functional carries one power of λ."""
    if isinstance(V, CouplingSeries):
        series = _fit(V, orders)
    else:
        _check_order(V, orders)
        series = CouplingSeries.linear(V, orders.v_order)
    if series[0]:
        raise PreconditionError("an interaction must vanish at λ = 0")
    return series


def operand_series(F: SeriesLike, orders: PerturbativeOrders) -> CouplingSeries:
    """Interpret F as an operand: a bare functional sits at λ⁰."""
    if isinstance(F, CouplingSeries):
        return _fit(F, orders)
    _check_order(F, orders)
    return CouplingSeries.constant(F, orders.v_order)


def _check_order(F: Functional, orders: PerturbativeOrders):
    if F.order != orders.hbar_order:
        raise TruncationMismatchError(F.order, orders.hbar_order)


def _fit(series: CouplingSeries, orders: PerturbativeOrders) -> CouplingSeries:
    if series.hbar_order != orders.hbar_order:
        raise TruncationMismatchError(series.hbar_order, orders.hbar_order)
    comps = list(series.components[:orders.v_order + 1])
    comps += [Functional.zero(orders.hbar_order)] * (orders.v_order + 1 - len(comps))
    return CouplingSeries(comps)


def require_window(model: Model, *items: SeriesLike):
    for item in items:
        support = item.support()
        if not support <= model.window:
            raise SupportError(f"support {sorted(support)} leaves the window {sorted(model.window)}")


# ---------------------------------------------------------------------------
# Stored (ℏ^k-scaled) representation
# ---------------------------------------------------------------------------

def scale_up(series: CouplingSeries, orders: PerturbativeOrders) -> CouplingSeries:
    """stored_k = ℏ^k · true_k at the working order; inputs are exact polynomials in ℏ."""
    W = orders.working_order
    return CouplingSeries([c.pad(W).shift(k) for k, c in enumerate(series.components)])


def unscale(stored: CouplingSeries, orders: PerturbativeOrders, offset: int = 0,
            factor=ONE) -> CouplingSeries:
    """true_k = stored_k / (factor·ℏ^{k−offset}), re-truncated at the ℏ order.

    ``offset = 1`` with ``factor = i`` undoes the i/ℏ carried by quantities such
    as e^{-iV/ℏ}·_T{e^{iV/ℏ},S₀}_⋆. Raises NegativeHbarPowerError if a negative
    power of ℏ survives.
    """
    inv = ONE / scalar(factor)
    out = []
    for k, c in enumerate(stored.components):
        power = k - offset
        value = c.unshift(power) if power >= 0 else c.shift(-power)
        out.append(value.scale(inv).pad(orders.hbar_order))
    return CouplingSeries(out)


def stored_exponent(V: SeriesLike, orders: PerturbativeOrders, factor=I_UNIT) -> CouplingSeries:
    """Stored form of factor·V/ℏ: component n is factor·ℏ^{n−1}·V_n.

    Raises GradingError when a component has an odd part.
    """
    series = interaction_series(V, orders)
    for n, comp in enumerate(series.components):
        if comp.parity_parts()[1]:
            raise GradingError(f"interaction component λ^{n} has an odd part")
    W = orders.working_order
    comps = [Functional.zero(W)]
    for n in range(1, series.v_order + 1):
        comps.append(series[n].pad(W).shift(n - 1).scale(factor))
    return CouplingSeries(comps)


def series_exp(A: CouplingSeries, product: Product) -> CouplingSeries:
    """exp under a product, for A without λ⁰ component: Σ_j A^j/j!."""
    if A[0]:
        raise PreconditionError("series exponential needs a vanishing λ⁰ component")
    one = Functional.one(A.hbar_order)
    result = CouplingSeries.constant(one, A.v_order)
    term = result
    for j in range(1, A.v_order + 1):
        term = term.convolve(A, product).scale(rational_scalar(1, j))
        if term.is_zero():
            break
        result = result + term
    return result


def series_inverse(E: CouplingSeries, product: Product) -> CouplingSeries:
    """Inverse under a product by the geometric series Σ (1−E)^j; needs E₀ = 1."""
    one = Functional.one(E.hbar_order)
    if E[0] != one:
        raise PreconditionError("the λ⁰ component must be 1 for the series to be invertible")
    B = CouplingSeries.constant(one, E.v_order) - E
    result = CouplingSeries.constant(one, E.v_order)
    term = result
    for _ in range(E.v_order):
        term = term.convolve(B, product)
        if term.is_zero():
            break
        result = result + term
    return result


def model_products(model: Model) -> Tuple[Product, Product]:
    return (lambda a, b: star(a, b, model)), (lambda a, b: tprod(a, b, model))


def time_ordered_exponential(V: SeriesLike, model: Model, orders: PerturbativeOrders,
                             factor=I_UNIT) -> CouplingSeries:
    """Stored e_T^{factor·V/ℏ}."""
    _, tp = model_products(model)
    return series_exp(stored_exponent(V, orders, factor), tp)


# ---------------------------------------------------------------------------
# S-matrices and the interacting structure
# ---------------------------------------------------------------------------

def smatrix_series(V: SeriesLike, model: Model, orders: PerturbativeOrders) -> CouplingSeries:
    require_window(model, V)
    _, tp = model_products(model)
    series = series_exp(interaction_series(V, orders), tp)
    logger.debug(f"S-matrix expanded to λ^{orders.v_order} at ℏ^{orders.hbar_order}")
    return series


def smatrix(V: SeriesLike, model: Model, orders: PerturbativeOrders) -> Functional:
    """e_T^V = Σ_{k≤M} V^{·_T k}/k!, summed at λ = 1."""
    return smatrix_series(V, model, orders).at_coupling()


def bogoliubov_smatrix(V: SeriesLike, F: SeriesLike, model: Model, orders: PerturbativeOrders) -> Functional:
    """S(V)^{⋆−1} ⋆ S(V+F), both arguments weighted by λ, summed at λ = 1."""
    st, _ = model_products(model)
    total = interaction_series(V, orders) + interaction_series(F, orders)
    result = series_inverse(smatrix_series(V, model, orders), st).convolve(
        smatrix_series(total, model, orders), st)
    return result.at_coupling()


def bogoliubov_derivative(V: SeriesLike, F: Functional, model: Model,
                          orders: PerturbativeOrders) -> CouplingSeries:
    """−iℏ d/dμ|₀ of S(iV/ℏ)^{⋆−1} ⋆ S(i(V+μF)/ℏ), by dual-number expansion.

    The direction F is weighted with one extra power of λ so the stored
    normalization stays free of negative ℏ powers; the result is shifted back.
    """
    require_window(model, V, F)
    wide = PerturbativeOrders(orders.hbar_order, orders.v_order + 1)
    st, tp = model_products(model)
    A = stored_exponent(V, wide)
    B = stored_exponent(CouplingSeries.linear(F, wide.v_order), wide)
    one = Functional.one(wide.working_order)
    value = CouplingSeries.constant(one, wide.v_order)
    tangent = CouplingSeries.zero(wide.working_order, wide.v_order)
    total_value, total_tangent = value, tangent
    for j in range(1, wide.v_order + 1):
        inv_j = rational_scalar(1, j)
        value, tangent = (value.convolve(A, tp).scale(inv_j),
                          (tangent.convolve(A, tp) + value.convolve(B, tp)).scale(inv_j))
        total_value = total_value + value
        total_tangent = total_tangent + tangent
    derivative = series_inverse(total_value, st).convolve(total_tangent, st)
    # stored_{k+1} = ℏ^{k+1}·(i/ℏ)·R_k
    comps = []
    for k in range(orders.v_order + 1):
        comps.append(derivative[k + 1].unshift(k).scale(ONE / I_UNIT).pad(orders.hbar_order))
    return CouplingSeries(comps)


def retarded_map(V: SeriesLike, F: SeriesLike, model: Model, orders: PerturbativeOrders,
                 direction: str = 'forward') -> CouplingSeries:
    """R_V(F) = E^{⋆−1} ⋆ (E ·_T F) and R_V⁻¹(F) = E^{−1}_T ·_T (E ⋆ F), E = e_T^{iV/ℏ}."""
    require_window(model, V, F)
    st, tp = model_products(model)
    E = time_ordered_exponential(V, model, orders)
    Fs = scale_up(operand_series(F, orders), orders)
    if direction == 'forward':
        stored = series_inverse(E, st).convolve(E.convolve(Fs, tp), st)
    elif direction == 'inverse':
        E_bar = time_ordered_exponential(V, model, orders, factor=-I_UNIT)
        stored = E_bar.convolve(E.convolve(Fs, st), tp)
    else:
        raise PreconditionError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return unscale(stored, orders)


def interacting_star(F: SeriesLike, G: SeriesLike, V: SeriesLike, model: Model,
                     orders: PerturbativeOrders) -> CouplingSeries:
    """F ⋆_V G = R_V⁻¹(R_V F ⋆ R_V G)."""
    st, _ = model_products(model)
    product = retarded_map(V, F, model, orders).convolve(retarded_map(V, G, model, orders), st)
    return retarded_map(V, product, model, orders, direction='inverse')
