"""
BV structure on lattice functionals: the graded Laplacian, antibrackets for
the pointwise, time-ordered, ⋆ and scale-Λ products, Koszul maps, the
quantum BV operator, master-equation residuals, the gauge-fixing
automorphism and on-shell reduction.

Sign convention: △ = Σ_g ∂_{base(g)} ∂_g over antifield generators g, the
antifield derivative acting first, with constant sign +1. Antibrackets are
defined as the failure of △ to be a derivation of the matching product.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

from sympy import I, ImmutableMatrix, Rational
from sympy.polys.domains import QQ
from sympy.polys.matrices import DomainMatrix

from bvlattice.errors import GradingError, PreconditionError
from bvlattice.graded_core import (
    I_UNIT,
    UNIT_MONOMIAL,
    Functional,
    Generator,
    HbarSeries,
    Species,
    pointwise_product,
    rational_scalar,
)
from bvlattice.lattice_model import (
    Kernel,
    Lagrangian,
    Model,
    ModelSpec,
    build_model,
    cutoff_indicator,
    wave_chain_spec,
)
from bvlattice.products import (
    CouplingSeries,
    PerturbativeOrders,
    Product,
    SeriesLike,
    exponentiated_laplacian,
    exponentiated_pairing,
    interaction_series,
    model_products,
    operand_series,
    require_window,
    scale_up,
    series_exp,
    series_inverse,
    star,
    stored_exponent,
    time_order,
    time_ordered_exponential,
    tprod,
    unscale,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Scale families
# ---------------------------------------------------------------------------

class ScaleFamily:
    """A regularized Feynman propagator h_Λ with h_Λ → H_F = H + iΔ_D.

    Without an explicit rule the family is h_Λ = H + i·Λ/(Λ+1)·Δ_D.
    """

    def __init__(self, model: Model, rule: Optional[Callable[[Rational], ImmutableMatrix]] = None):
        self.model = model
        self.rule = rule or self.default_rule
        self._gaps: Dict[Rational, Kernel] = {}

    def default_rule(self, scale: Rational) -> ImmutableMatrix:
        return self.model.H + I * (scale / (scale + 1)) * self.model.delta_d

    def h(self, scale) -> ImmutableMatrix:
        scale = Rational(scale)
        if scale < 0:
            raise PreconditionError(f"scale must be non-negative, got {scale}")
        matrix = ImmutableMatrix(self.rule(scale))
        if matrix != matrix.T:
            raise PreconditionError(f"h_Λ is not symmetric at Λ = {scale}")
        return matrix

    def gap(self, scale) -> Kernel:
        """The kernel h_Λ − H that T_Λ contracts with."""
        scale = Rational(scale)
        if scale not in self._gaps:
            kernel = Kernel.from_matrix(self.h(scale) - self.model.H)
            if not kernel.nonzero:
                logger.warning(f"h_Λ = H at Λ = {scale}; T_Λ is the identity")
            self._gaps[scale] = kernel
        return self._gaps[scale]

    def laplacian_kernel(self, scale) -> Kernel:
        """K·(h_Λ − H), the kernel of △_Λ."""
        return self.model.kernel_k.matmul(self.gap(scale))

    def t_lambda(self, F: Functional, scale, direction: str = 'forward') -> Functional:
        """T_Λ = exp(iℏ·½ Σ (h_Λ − H) ∂∂)."""
        sign = I_UNIT if direction == 'forward' else -I_UNIT
        return exponentiated_laplacian(F, self.gap(scale), sign)

    def tprod_lambda(self, F: Functional, G: Functional, scale) -> Functional:
        return exponentiated_pairing(F, G, self.gap(scale), I_UNIT)


@dataclass(frozen=True)
class ScaleMode:
    """Bracket/Laplacian mode at a fixed scale Λ of a family."""

    family: ScaleFamily
    scale: Rational


BracketMode = Union[str, ScaleMode, Product]


# ---------------------------------------------------------------------------
# Laplacian and antibrackets
# ---------------------------------------------------------------------------

def _antifield_generators(Q: Functional) -> List[Generator]:
    return [g for g in Q.generators() if g.is_antifield]


def bv_laplacian(Q: Functional, mode: Union[str, ScaleMode] = 'standard') -> Functional:
    """△Q = Σ_g ∂_{base(g)} ∂_g Q, or △_Λ = Σ (K(h_Λ−H))(x,y) ∂_{φ(y)} ∂_{φ‡(x)} in scale mode."""
    if isinstance(mode, ScaleMode):
        return _scale_laplacian(Q, mode)
    if mode != 'standard':
        raise PreconditionError(f"unknown Laplacian mode {mode!r}")
    terms = [Q.derivative(g).derivative(g.partner()) for g in _antifield_generators(Q)]
    return Functional.sum(terms, Q.order)


def _scale_laplacian(Q: Functional, mode: ScaleMode) -> Functional:
    kernel = mode.family.laplacian_kernel(mode.scale)
    terms = []
    for g in _antifield_generators(Q):
        base = g.partner()
        if not base.species.propagating:
            continue
        dQ = Q.derivative(g)
        for y in mode.family.model.sites:
            value = kernel(g.site, y)
            if value:
                terms.append(dQ.derivative(Generator(base.species, y)).scale(value))
    return Functional.sum(terms, Q.order)


def _mode_product(model: Optional[Model], mode: BracketMode) -> Product:
    if callable(mode):
        return mode
    if mode == 'geometric' or isinstance(mode, ScaleMode):
        return pointwise_product
    if model is None:
        raise PreconditionError(f"bracket mode {mode!r} needs a model")
    if mode == 'timeordered':
        return lambda a, b: tprod(a, b, model)
    if mode == 'star':
        return lambda a, b: star(a, b, model)
    raise PreconditionError(f"unknown bracket mode {mode!r}")


def _parity_sign(P: Functional) -> int:
    return -1 if P.parity() else 1


def antibracket(P: Functional, Q: Functional, model: Optional[Model] = None,
                mode: BracketMode = 'geometric') -> Functional:
    """{P,Q} = △(P∘Q) − △P∘Q − (−1)^{|P|} P∘△Q for the product ∘ of the mode.

    An inhomogeneous P is split into its parity parts.
    """
    product = _mode_product(model, mode)
    lap = mode if isinstance(mode, ScaleMode) else 'standard'
    out = Functional.zero(P.order)
    for part in P.parity_parts():
        if not part:
            continue
        value = (bv_laplacian(product(part, Q), lap)
                 - product(bv_laplacian(part, lap), Q)
                 - product(part, bv_laplacian(Q, lap)).scale(_parity_sign(part)))
        out = out + value
    return out


def bracket_direct(P: Functional, Q: Functional, model: Optional[Model] = None,
                   mode: str = 'geometric') -> Functional:
    """Σ_a ε₁ (∂_{a‡}P)∘(∂_aQ) + ε₂ (∂_aP)∘(∂_{a‡}Q).

    ε₁ = 1 for even a and (−1)^{|P|} for odd a; ε₂ = (−1)^{|P|} for even a and 1 for odd a.
    """
    if isinstance(mode, ScaleMode):
        raise PreconditionError("the scale bracket has no pairing form")
    product = _mode_product(model, mode)
    fields = {g if not g.is_antifield else g.partner() for g in P.generators() | Q.generators()}
    out = Functional.zero(P.order)
    for part in P.parity_parts():
        if not part:
            continue
        sign_p = _parity_sign(part)
        terms = []
        for a in fields:
            anti = a.partner()
            eps1 = sign_p if a.odd else 1
            eps2 = 1 if a.odd else sign_p
            left = part.derivative(anti)
            if left:
                right = Q.derivative(a)
                if right:
                    terms.append(product(left, right).scale(eps1))
            left = part.derivative(a)
            if left:
                right = Q.derivative(anti)
                if right:
                    terms.append(product(left, right).scale(eps2))
        out = out + Functional.sum(terms, P.order)
    return out


def timeordered_bracket_conjugated(P: Functional, Q: Functional, model: Model) -> Functional:
    """T{T⁻¹P, T⁻¹Q}."""
    return time_order(antibracket(time_order(P, model, 'inverse'), time_order(Q, model, 'inverse')), model)


def transported_scale_bracket(A: Functional, B: Functional, mode: ScaleMode) -> Functional:
    """T_Λ{T_Λ⁻¹A, T_Λ⁻¹B}_Λ."""
    fam, scale = mode.family, mode.scale
    return fam.t_lambda(antibracket(fam.t_lambda(A, scale, 'inverse'), fam.t_lambda(B, scale, 'inverse'),
                                    mode=mode), scale)


# ---------------------------------------------------------------------------
# Koszul maps
# ---------------------------------------------------------------------------

def koszul(X: Functional, action: Union[Lagrangian, Functional], model: Model,
           mode: str = 'classical') -> Functional:
    """δ_S X = {X, S}; time-ordered: δᵀ_S X = T δ_{T⁻¹S} T⁻¹X = {X, S}_T.

    A Lagrangian is evaluated on the indicator of supp X and its neighbours.
    """
    if isinstance(action, Lagrangian):
        f = cutoff_indicator(model, model.closed_neighborhood(X.support()))
        S = action(f)
    else:
        S = action
    if mode == 'classical':
        return antibracket(X, S, model)
    if mode == 'timeordered':
        require_window(model, X)
        return timeordered_bracket_conjugated(X, S, model)
    raise PreconditionError(f"unknown Koszul mode {mode!r}")


# ---------------------------------------------------------------------------
# Quantum BV operator and master equations
# ---------------------------------------------------------------------------

def _stored_free_action(model: Model, orders: PerturbativeOrders, extra: Optional[Functional] = None) -> Functional:
    S = model.S0(orders.working_order)
    if extra is not None:
        S = S + extra.pad(orders.working_order)
    return S


def check_theta_precondition(theta0: Functional, model: Model):
    """{S₀, θ₀}_T must vanish."""
    residual = antibracket(model.S0(theta0.order), theta0, model, 'timeordered')
    if residual:
        raise PreconditionError(f"{{S0, theta0}}_T does not vanish: {residual.pretty()}")


def qbv_hat(X: SeriesLike, V: SeriesLike, model: Model, orders: PerturbativeOrders,
            variant: str = 'plain', theta0: Optional[Functional] = None,
            scale: Optional[ScaleMode] = None) -> CouplingSeries:
    """ŝX = e_T^{−iV/ℏ} ·_T {e_T^{iV/ℏ} ·_T X, S₀ (+θ₀)}_⋆.

    With ``scale`` the time-ordered product is replaced by the regularized T_Λ product.
    """
    require_window(model, X, V)
    extra = None
    if variant == 'with_theta':
        if theta0 is None:
            raise PreconditionError("the with_theta variant needs θ₀")
        check_theta_precondition(theta0, model)
        extra = theta0
    elif variant != 'plain':
        raise PreconditionError(f"unknown variant {variant!r}")
    if scale is not None:
        tp = lambda a, b: scale.family.tprod_lambda(a, b, scale.scale)
    else:
        _, tp = model_products(model)
    S = _stored_free_action(model, orders, extra)
    E = series_exp(stored_exponent(V, orders), tp)
    E_bar = series_exp(stored_exponent(V, orders, -I_UNIT), tp)
    EX = E.convolve(scale_up(operand_series(X, orders), orders), tp)
    bracket = EX.map(lambda Y: antibracket(Y, S, model, 'star'))
    return unscale(E_bar.convolve(bracket, tp), orders)


def qme_residual(V: SeriesLike, model: Model, orders: PerturbativeOrders,
                 variant: str = 'exact', scale: Optional[ScaleMode] = None) -> CouplingSeries:
    """Master-equation residual.

    exact: (ℏ/i)·e_T^{−iV/ℏ} ·_T {e_T^{iV/ℏ}, S₀}_⋆, which equals
    ½{S₀+V,S₀+V}_T − iℏ△(S₀+V).
    regularized: δ^Λ V − iℏ△_Λ V + ½ T_Λ{T_Λ⁻¹V, T_Λ⁻¹V}_Λ.
    """
    require_window(model, V)
    if variant == 'exact':
        st, tp = model_products(model)
        S = _stored_free_action(model, orders)
        E = time_ordered_exponential(V, model, orders)
        E_bar = time_ordered_exponential(V, model, orders, factor=-I_UNIT)
        bracket = E.map(lambda Y: antibracket(Y, S, model, 'star'))
        return unscale(E_bar.convolve(bracket, tp), orders, offset=1, factor=I_UNIT)
    if variant == 'regularized':
        if scale is None:
            raise PreconditionError("the regularized residual needs a ScaleMode")
        return _regularized_three_term(V, model, orders, scale)
    raise PreconditionError(f"unknown variant {variant!r}")


def qme_bracket_form(V: SeriesLike, model: Model, orders: PerturbativeOrders) -> CouplingSeries:
    """½{S₀+V, S₀+V}_T − iℏ△(S₀+V), expanded in λ."""
    S = model.S0(orders.hbar_order)
    total = interaction_series(V, orders) + CouplingSeries.constant(S, orders.v_order)
    bracket = total.convolve(total, lambda a, b: antibracket(a, b, model, 'timeordered'))
    hbar_i = i_hbar(orders.hbar_order)
    return bracket.scale(rational_scalar(1, 2)) - total.map(lambda F: bv_laplacian(F).scale(hbar_i))


def i_hbar(order: int) -> HbarSeries:
    return HbarSeries.monomial(I_UNIT, 1, order)


def _regularized_three_term(V: SeriesLike, model: Model, orders: PerturbativeOrders,
                            mode: ScaleMode) -> CouplingSeries:
    fam, scale = mode.family, mode.scale
    series = interaction_series(V, orders)
    S = model.S0(orders.hbar_order)
    U = series.map(lambda F: fam.t_lambda(F, scale, 'inverse'))
    koszul_part = U.map(lambda F: fam.t_lambda(antibracket(F, S), scale))
    laplace_part = series.map(lambda F: bv_laplacian(F, mode).scale(i_hbar(orders.hbar_order)))
    bracket = U.convolve(U, lambda a, b: antibracket(a, b, mode=mode)).map(lambda F: fam.t_lambda(F, scale))
    return koszul_part - laplace_part + bracket.scale(rational_scalar(1, 2))


def regularized_qme_bracket_form(V: SeriesLike, model: Model, orders: PerturbativeOrders,
                                 mode: ScaleMode) -> CouplingSeries:
    """(ℏ/i)·E_Λ^{−1} ·_{T_Λ} {E_Λ, S₀}_⋆ with E_Λ = e_{T_Λ}^{iV/ℏ}."""
    require_window(model, V)
    tp = lambda a, b: mode.family.tprod_lambda(a, b, mode.scale)
    S = _stored_free_action(model, orders)
    E = series_exp(stored_exponent(V, orders), tp)
    E_bar = series_exp(stored_exponent(V, orders, -I_UNIT), tp)
    bracket = E.map(lambda Y: antibracket(Y, S, model, 'star'))
    return unscale(E_bar.convolve(bracket, tp), orders, offset=1, factor=I_UNIT)


# ---------------------------------------------------------------------------
# Gauge fixing and on-shell reduction
# ---------------------------------------------------------------------------

def _check_gauge_fermion(psi: Functional):
    if psi.without_antifields() != psi:
        raise GradingError("the gauge-fixing fermion must not contain antifields")
    if psi and (psi.parity_parts()[0] or psi.ghost_numbers() != {-1}):
        raise GradingError("the gauge-fixing fermion must be odd with ghost number −1")


def gauge_fermion_auto(psi: Functional, X: Functional, model: Model) -> Functional:
    """α_ψ(X) = Σ_n ad_ψ^n(X)/n! with ad_ψ = {ψ, ·}_T; each bracket lowers #af."""
    _check_gauge_fermion(psi)
    result = X
    term = X
    n = 0
    while term:
        n += 1
        term = antibracket(psi, term, model, 'timeordered').scale(rational_scalar(1, n))
        result = result + term
        if n > max(X.antifield_numbers(), default=0) + 1 and term:
            raise PreconditionError("gauge-fixing series does not terminate")
    return result


def _to_qq(value) -> object:
    value = Rational(value)
    return QQ(int(value.p), int(value.q))


def _eom_substitutions(model: Model, order: int) -> Dict[Generator, Functional]:
    """Pivot generator → expression, eliminating late sites by the window EOM rows."""
    subs: Dict[Generator, Functional] = {}
    window = sorted(model.window, key=model.rank)
    columns = sorted(model.sites, key=model.rank, reverse=True)
    for sp in model.propagating:
        rows = [[_to_qq(model.K[x, u]) for u in columns] for x in window]
        if not rows:
            continue
        reduced, pivots = DomainMatrix(rows, (len(rows), len(columns)), QQ).rref()
        dense = reduced.to_Matrix()
        for r, p in enumerate(pivots):
            expr = Functional.sum(
                (Functional.generator(Generator(sp, columns[j]), order, -dense[r, j])
                 for j in range(len(columns)) if j != p and dense[r, j] != 0),
                order)
            subs[Generator(sp, columns[p])] = expr
    return subs


def onshell_reduce(F: Functional, model: Model) -> Functional:
    """Normal form of F modulo the ideal of the free field equations (Kφ)(x), x ∈ W."""
    subs = _eom_substitutions(model, F.order)
    out = Functional.zero(F.order)
    for mono, coeff in F.terms.items():
        value = Functional({UNIT_MONOMIAL: coeff}, F.order)
        for g, m in mono.factors:
            factor = subs.get(g)
            if factor is None:
                factor = Functional.generator(g, F.order)
            for _ in range(m):
                value = pointwise_product(value, factor)
        out = out + value
    return out


# ---------------------------------------------------------------------------
# θ₀ and the trivial-pair model
# ---------------------------------------------------------------------------

TRIVIAL_PAIR_SPECIES = (
    Species('phi', 0, propagating=True),
    Species('b', 0, ghost_number=0),
    Species('c', 1, ghost_number=1),
    Species('cbar', 1, ghost_number=-1),
)


def trivial_pair_spec(n_sites: int = 5) -> ModelSpec:
    """Wave chain with a non-propagating ghost sector (c, c̄, b) decoupled from φ."""
    spec = wave_chain_spec(n_sites, TRIVIAL_PAIR_SPECIES)
    return ModelSpec(spec.n_sites, spec.window, spec.K, spec.species, name=f"TP{n_sites}")


def trivial_pair_model(n_sites: int = 5) -> Model:
    return build_model(trivial_pair_spec(n_sites))


def theta0(model: Model, order: int) -> Functional:
    """θ₀ = Σ_{x∈W} c̄‡(x) b(x)."""
    return Functional.sum(
        (Functional.from_product([model.gen('cbar*', x), model.gen('b', x)], order)
         for x in sorted(model.window)),
        order)


@dataclass
class ThetaIdentityResult:
    holds: bool
    residual: CouplingSeries


def theta_identity_check(V: SeriesLike, X: SeriesLike, theta: Functional, model: Model,
                         orders: PerturbativeOrders) -> ThetaIdentityResult:
    """{e_T^{iV/ℏ}·_T X, θ₀}_T = {e_T^{iV/ℏ}·_T X, θ₀}_⋆.

    The residual is reported in the ℏ^k-scaled normalization of λ^k.
    """
    check_theta_precondition(theta, model)
    _, tp = model_products(model)
    E = time_ordered_exponential(V, model, orders)
    EX = E.convolve(scale_up(operand_series(X, orders), orders), tp)
    th = theta.pad(orders.working_order)
    residual = EX.map(lambda Y: antibracket(Y, th, model, 'timeordered') - antibracket(Y, th, model, 'star'))
    return ThetaIdentityResult(residual.is_zero(), residual)


@dataclass
class GaugeIndependenceResult:
    qme_covariant: bool
    qme_holds: bool
    smatrix_onshell_residual: CouplingSeries
    smatrix_independent: Optional[bool]
    observable_onshell_residual: Optional[CouplingSeries] = None
    notes: List[str] = field(default_factory=list)


def gauge_independence_check(V: SeriesLike, psi: Functional, model: Model, orders: PerturbativeOrders,
                             F: Optional[Functional] = None) -> GaugeIndependenceResult:
    """Compare the master equation before and after the gauge-fixing automorphism α_ψ.

    Always checks Q(α_ψV) = α_ψ(Q(V)). When Q(V) = 0 the S-matrix condition
    {ψ, e_T^{iṼ/ℏ}}_T ≈ 0 on-shell is asserted; otherwise it is only reported.
    """
    require_window(model, V, psi)
    series = interaction_series(V, orders)
    alpha = lambda G: gauge_fermion_auto(psi, G, model)
    transformed = series.map(alpha)
    q_before = qme_residual(series, model, orders)
    q_after = qme_residual(transformed, model, orders)
    covariant = q_after == q_before.map(alpha)
    holds = q_before.is_zero()

    W = orders.working_order
    st, tp = model_products(model)
    psi_w = psi.pad(W)
    E = time_ordered_exponential(transformed, model, orders)
    onshell = E.map(lambda Y: onshell_reduce(antibracket(psi_w, Y, model, 'timeordered'), model))
    notes = []
    independent: Optional[bool] = onshell.is_zero()
    if not holds:
        notes.append("master equation fails; on-shell S-matrix condition reported only")
        independent = None

    observable = None
    if F is not None:
        S = _stored_free_action(model, orders)
        F_tilde = scale_up(operand_series(alpha(F), orders), orders)
        inner = E.convolve(F_tilde, tp).map(lambda Y: antibracket(Y, S, model, 'star'))
        psi_series = CouplingSeries.constant(psi_w, orders.v_order)
        value = series_inverse(E, st).convolve(psi_series.convolve(inner, tp), st)
        observable = value.map(lambda Y: onshell_reduce(Y, model))
    logger.debug(f"gauge independence: covariant={covariant}, qme={holds}, on-shell={independent}")
    return GaugeIndependenceResult(covariant, holds, onshell, independent, observable, notes)
