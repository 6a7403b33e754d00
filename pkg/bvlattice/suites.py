"""
Identity suites.

Every property the engine promises is registered here as a named check with
an anchor string naming the identity it verifies. A check returns ``None``
when the identity holds and a counterexample mapping otherwise; engine
errors raised while checking are caught and recorded as failures.
"""
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from sympy import Rational

from bvlattice.bv_core import (
    ScaleFamily,
    ScaleMode,
    antibracket,
    bracket_direct,
    bv_laplacian,
    gauge_independence_check,
    i_hbar,
    koszul,
    onshell_reduce,
    qbv_hat,
    qme_bracket_form,
    qme_residual,
    regularized_qme_bracket_form,
    theta_identity_check,
    timeordered_bracket_conjugated,
)
from bvlattice.errors import BVLatticeError, LagrangianAxiomError
from bvlattice.graded_core import (
    I_UNIT,
    Functional,
    Generator,
    HbarSeries,
    Monomial,
    mono_mul,
    pointwise_product,
    scalar,
)
from bvlattice.lattice_model import (
    Lagrangian,
    Model,
    free_lagrangian,
    lagrangian_equiv,
    random_functional,
    validate_lagrangian,
)
from bvlattice.products import (
    HALF,
    CouplingSeries,
    PerturbativeOrders,
    bogoliubov_derivative,
    interacting_star,
    involution,
    operand_series,
    peierls_bracket,
    retarded_map,
    star,
    star_commutator,
    time_order,
    tprod,
)
from bvlattice.renorm import (
    RenMap,
    absorb_anomaly,
    adiabatic_qme_check,
    anomaly_extract,
    beta_decompose,
    beta_reconstruct,
    interaction_lagrangian,
    leading_hbar_order,
    local_field,
    m_product,
    make_tn_family,
    qbv_ren,
    qbv_ren_direct,
    qme_ren_residual,
    redefine_renormalization,
    renormalized_smatrix_stored,
    rg_covariance_check,
    smatrix_from_tn,
    tn_apply,
    tren_bracket,
    tren_exponential,
    tren_multiply,
    tren_product,
    tren_product_tensor,
    tren_retarded_map,
    wess_zumino_check,
    z_validate,
)
from bvlattice.reporting import ERROR, FAIL, PASS, CheckRecord

logger = logging.getLogger(__name__)

Outcome = Optional[Dict[str, str]]

DEFAULT_SCALES = (Rational(0), Rational(1), Rational(10))


@dataclass
class SuiteContext:
    """Everything a suite needs: the model, its named data and the run parameters."""

    model: Model
    orders: PerturbativeOrders
    seed: int = 0
    samples: int = 200
    functionals: Dict[str, Functional] = field(default_factory=dict)
    Z: RenMap = field(default_factory=RenMap)
    theta0: Optional[Functional] = None
    psi: Optional[Functional] = None
    scales: Tuple[Rational, ...] = DEFAULT_SCALES
    degree_bound: int = 3

    @property
    def N(self) -> int:
        return self.orders.hbar_order

    @property
    def heavy_samples(self) -> int:
        return max(1, min(4, self.samples))

    def rng(self, tag: str) -> random.Random:
        return random.Random(f"{self.seed}:{tag}")

    def functional(self, name: str) -> Optional[Functional]:
        F = self.functionals.get(name)
        return None if F is None else F.pad(self.N)

    @property
    def interior(self) -> List[int]:
        """Window sites whose K-neighbourhood stays inside the window."""
        m = self.model
        return [x for x in sorted(m.window) if m.closed_neighborhood([x]) <= m.window]

    @property
    def propagating_names(self) -> List[str]:
        return [sp.name for sp in self.model.propagating]

    def interaction(self) -> Functional:
        """The named interaction ``V``, or φ(c)³/6 at the central interior site."""
        V = self.functional('V')
        if V is not None:
            return V
        sites = self.interior or sorted(self.model.window)
        g = Generator(self.model.primary, sites[len(sites) // 2])
        return Functional.from_product([g, g, g], self.N, Rational(1, 6))

    def interaction_with_antifield(self) -> Functional:
        """V plus the even vector-field term ½φ‡(c)φ‡(c′)φ(c)φ(c′) for c ∈ supp V and a second window site c′."""
        V = self.interaction()
        c = min(V.support())
        other = next(x for x in sorted(self.model.window) if x != c)
        name = self.model.primary.name
        gens = [self.model.gen(f"{name}*", c), self.model.gen(f"{name}*", other),
                self.model.gen(name, c), self.model.gen(name, other)]
        return V + Functional.from_product(gens, self.N, Rational(1, 2))


@dataclass
class Check:
    identity: str
    anchor: str
    run: Callable[[], Outcome]


# ---------------------------------------------------------------------------
# Counterexample formatting
# ---------------------------------------------------------------------------

def show(value) -> str:
    if isinstance(value, Functional):
        return value.pretty()
    if isinstance(value, CouplingSeries):
        parts = [f"λ^{k}·[{c.pretty()}]" for k, c in enumerate(value.components) if c]
        return " + ".join(parts) if parts else "0"
    return str(value)


def counterexample(residual, **inputs) -> Dict[str, str]:
    data = {name: show(value) for name, value in inputs.items()}
    data['residual'] = show(residual)
    return data


def _homogeneous(F: Functional, rng: random.Random) -> Functional:
    even, odd = F.parity_parts()
    if odd and (not even or rng.random() < 0.5):
        return odd
    return even


class IdentityVerifier:
    """Runs identity suites against one model and collects check records."""

    def __init__(self, context: SuiteContext):
        self.context = context
        self.records: List[CheckRecord] = []

    # -- sampling helpers ---------------------------------------------------

    def _random(self, rng: random.Random, **kwargs) -> Functional:
        ctx = self.context
        return random_functional(ctx.model, rng, ctx.N, **kwargs)

    def _graded(self, rng: random.Random, **kwargs) -> Functional:
        kwargs.setdefault('max_antifields', 2)
        return _homogeneous(self._random(rng, **kwargs), rng)

    def _window_field(self, rng: random.Random, sites: Optional[Sequence[int]] = None,
                      max_antifields: int = 2) -> Functional:
        """A parity-homogeneous window functional in the propagating sector."""
        return self._graded(rng, sites=sites, species=self.context.propagating_names,
                            max_antifields=max_antifields)

    def _local_field(self, rng: random.Random, sites: Optional[Sequence[int]] = None,
                     max_antifields: int = 1) -> Functional:
        """A sum of single-site propagating-sector functionals."""
        ctx = self.context
        return local_field(ctx.model, rng, ctx.N, sites=sites, species=ctx.propagating_names,
                           max_antifields=max_antifields)

    # -- suites -------------------------------------------------------------

    def plan_algebra(self) -> List[Check]:
        ctx = self.context

        def graded_commutativity() -> Outcome:
            rng = ctx.rng('graded commutativity')
            for _ in range(ctx.samples):
                F, G = self._graded(rng), self._graded(rng)
                sign = -1 if F.parity() and G.parity() else 1
                residual = pointwise_product(F, G) - pointwise_product(G, F).scale(sign)
                if residual:
                    return counterexample(residual, F=F, G=G)
            return None

        def associativity() -> Outcome:
            rng = ctx.rng('associativity')
            for _ in range(ctx.samples):
                F, G, H = (self._random(rng) for _ in range(3))
                residual = (pointwise_product(pointwise_product(F, G), H)
                            - pointwise_product(F, pointwise_product(G, H)))
                if residual:
                    return counterexample(residual, F=F, G=G, H=H)
            return None

        def derivatives_commute() -> Outcome:
            rng = ctx.rng('derivatives commute')
            for _ in range(ctx.samples):
                F = self._random(rng, max_antifields=2)
                gens = sorted(F.generators(), key=lambda g: g.key)
                if not gens:
                    continue
                g, h = rng.choice(gens), rng.choice(gens)
                sign = -1 if g.odd and h.odd else 1
                residual = F.derivative(h).derivative(g) - F.derivative(g).derivative(h).scale(sign)
                if residual:
                    return counterexample(residual, F=F, g=g, h=h)
            return None

        def leibniz() -> Outcome:
            rng = ctx.rng('leibniz')
            for _ in range(ctx.samples):
                F, G = self._graded(rng), self._graded(rng)
                gens = sorted(F.generators() | G.generators(), key=lambda g: g.key)
                if not gens:
                    continue
                g = rng.choice(gens)
                sign = -1 if g.odd and F.parity() else 1
                expected = (pointwise_product(F.derivative(g), G)
                            + pointwise_product(F, G.derivative(g)).scale(sign))
                residual = pointwise_product(F, G).derivative(g) - expected
                if residual:
                    return counterexample(residual, F=F, G=G, g=g)
            return None

        def exponential_law() -> Outcome:
            rng = ctx.rng('exponential law')
            for _ in range(ctx.samples):
                a, b = (HbarSeries((scalar(0),) + tuple(scalar(Rational(rng.randint(-3, 3), rng.randint(1, 3)))
                                                        for _ in range(ctx.N)))
                        for _ in range(2))
                if a.exp() * b.exp() != (a + b).exp():
                    return {'a': str(a), 'b': str(b), 'residual': str(a.exp() * b.exp() - (a + b).exp())}
            return None

        def koszul_signs() -> Outcome:
            anti = f"{ctx.model.primary.name}*"
            sites = sorted(ctx.model.window)
            if len(sites) < 2:
                return None
            u = Monomial(((ctx.model.gen(anti, sites[0]), 1),))
            v = Monomial(((ctx.model.gen(anti, sites[1]), 1),))
            forward, backward, square = mono_mul(u, v), mono_mul(v, u), mono_mul(u, u)
            if forward[0] != 1 or backward[0] != -1 or square[1] is not None:
                return {'u': str(u), 'v': str(v),
                        'residual': f"u·v sign {forward[0]}, v·u sign {backward[0]}, u·u = {square[1]}"}
            return None

        def evaluation() -> Outcome:
            rng = ctx.rng('evaluation')
            m = ctx.model
            even = [sp for sp in m.field_species + m.antifield_species if not sp.odd]
            for _ in range(ctx.samples):
                config = {Generator(sp, s): Rational(rng.randint(-3, 3), rng.randint(1, 2))
                          for sp in even for s in m.sites}
                F, G = self._random(rng), self._random(rng)
                if (F + G).evaluate(config) != F.evaluate(config) + G.evaluate(config):
                    return counterexample(F + G, F=F, G=G, check='additivity')
                if pointwise_product(F, G).evaluate(config) != F.evaluate(config) * G.evaluate(config):
                    return counterexample(pointwise_product(F, G), F=F, G=G, check='multiplicativity')
            return None

        return [
            Check('graded commutativity', 'graded commutative algebra: F·G = (−1)^{|F||G|} G·F', graded_commutativity),
            Check('pointwise associativity', 'graded commutative algebra: associativity', associativity),
            Check('left derivatives graded-commute', 'left derivatives: ∂_g∂_h = (−1)^{|g||h|} ∂_h∂_g', derivatives_commute),
            Check('Leibniz rule', 'left derivatives: graded Leibniz rule', leibniz),
            Check('ℏ-series exponential law', 'formal power series: exp(a)exp(b) = exp(a+b)', exponential_law),
            Check('Koszul signs of odd generators', 'Koszul sign rule for odd transpositions', koszul_signs),
            Check('evaluation is a homomorphism', 'functionals as functions of configurations', evaluation),
        ]

    def plan_products(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        N = ctx.N

        def propagator_symmetries() -> Outcome:
            if model.delta != -model.delta.T:
                return {'residual': str(model.delta + model.delta.T), 'check': 'Δ antisymmetric'}
            if model.delta_d != model.delta_d.T or model.H != model.H.T:
                return {'residual': 'Δ_D or H not symmetric'}
            for x in model.sites:
                for y in model.sites:
                    if model.precedes(y, x):
                        if model.delta[x, y] != model.delta_r[x, y] or 2 * model.delta_d[x, y] != model.delta_r[x, y]:
                            return {'x': str(x), 'y': str(y),
                                    'residual': f"Δ={model.delta[x, y]}, Δ_D={model.delta_d[x, y]}, "
                                                f"Δ_R={model.delta_r[x, y]}"}
            return None

        def window_green() -> Outcome:
            dd_k = model.delta_d * model.K
            d_k = model.delta * model.K
            for z in sorted(model.window):
                for x in model.sites:
                    if dd_k[x, z] != (1 if x == z else 0) or d_k[x, z] != 0:
                        return {'x': str(x), 'z': str(z), 'residual': f"(Δ_D·K)={dd_k[x, z]}, (Δ·K)={d_k[x, z]}"}
            return None

        def two_point() -> Outcome:
            sp = model.primary
            for x in sorted(model.window):
                for y in sorted(model.window):
                    a, b = model.field(sp.name, x, N), model.field(sp.name, y, N)
                    plain = pointwise_product(a, b)
                    want_star = plain + Functional.hbar(1, N, I_UNIT * HALF * scalar(model.delta[x, y]))
                    want_t = plain + Functional.hbar(1, N, I_UNIT * scalar(model.delta_d[x, y]))
                    if star(a, b, model) != want_star:
                        return counterexample(star(a, b, model) - want_star, F=a, G=b, product='⋆')
                    if tprod(a, b, model) != want_t:
                        return counterexample(tprod(a, b, model) - want_t, F=a, G=b, product='·_T')
            return None

        def t_intertwines() -> Outcome:
            rng = ctx.rng('T intertwines')
            for _ in range(ctx.samples):
                F, G = self._random(rng), self._random(rng)
                lhs = time_order(pointwise_product(F, G), model)
                rhs = tprod(time_order(F, model), time_order(G, model), model)
                if lhs != rhs:
                    return counterexample(lhs - rhs, F=F, G=G)
            return None

        def t_product_algebra() -> Outcome:
            rng = ctx.rng('T product algebra')
            for _ in range(ctx.samples):
                F, G, H = self._graded(rng), self._graded(rng), self._random(rng)
                sign = -1 if F.parity() and G.parity() else 1
                residual = tprod(F, G, model) - tprod(G, F, model).scale(sign)
                if residual:
                    return counterexample(residual, F=F, G=G, check='commutativity')
                residual = tprod(tprod(F, G, model), H, model) - tprod(F, tprod(G, H, model), model)
                if residual:
                    return counterexample(residual, F=F, G=G, H=H, check='associativity')
            return None

        def star_associative() -> Outcome:
            rng = ctx.rng('star associative')
            for _ in range(ctx.samples):
                F, G, H = (self._random(rng) for _ in range(3))
                residual = star(star(F, G, model), H, model) - star(F, star(G, H, model), model)
                if residual:
                    return counterexample(residual, F=F, G=G, H=H)
            return None

        def causal_factorization() -> Outcome:
            rng = ctx.rng('causal factorization')
            order = list(model.time_order)
            for _ in range(ctx.samples):
                cut = rng.randint(1, len(order) - 1)
                F = self._random(rng, sites=order[cut:])
                G = self._random(rng, sites=order[:cut])
                residual = tprod(F, G, model) - star(F, G, model)
                if residual:
                    return counterexample(residual, later=F, earlier=G)
            return None

        def commutator_peierls() -> Outcome:
            rng = ctx.rng('commutator')
            for _ in range(ctx.samples):
                F = self._random(rng, species=ctx.propagating_names, max_antifields=0)
                G = self._random(rng, species=ctx.propagating_names, max_antifields=0)
                lhs = star_commutator(F, G, model).hbar_coefficient(1)
                rhs = peierls_bracket(F, G, model).hbar_coefficient(0).scale(I_UNIT)
                if N >= 1 and lhs != rhs:
                    return counterexample(lhs - rhs, F=F, G=G)
            return None

        def star_involution() -> Outcome:
            rng = ctx.rng('involution')
            for _ in range(ctx.samples):
                F = self._random(rng, species=ctx.propagating_names, max_antifields=0)
                G = self._random(rng, species=ctx.propagating_names, max_antifields=0)
                residual = involution(star(F, G, model)) - star(involution(G), involution(F), model)
                if residual:
                    return counterexample(residual, F=F, G=G)
            return None

        V = ctx.interaction()

        def retarded_round_trip() -> Outcome:
            rng = ctx.rng('retarded round trip')
            for _ in range(ctx.heavy_samples):
                F = self._window_field(rng, max_antifields=1)
                there = retarded_map(V, F, model, ctx.orders)
                back = retarded_map(V, there, model, ctx.orders, direction='inverse')
                residual = back - operand_series(F, ctx.orders)
                if not residual.is_zero():
                    return counterexample(residual, V=V, F=F)
            return None

        def bogoliubov() -> Outcome:
            rng = ctx.rng('bogoliubov')
            for _ in range(ctx.heavy_samples):
                F = self._random(rng, species=ctx.propagating_names, max_antifields=0)
                residual = bogoliubov_derivative(V, F, model, ctx.orders) - retarded_map(V, F, model, ctx.orders)
                if not residual.is_zero():
                    return counterexample(residual, V=V, F=F)
            return None

        def interacting_star_free_limit() -> Outcome:
            rng = ctx.rng('interacting star')
            for _ in range(ctx.heavy_samples):
                F, G = self._window_field(rng, max_antifields=0), self._window_field(rng, max_antifields=0)
                residual = interacting_star(F, G, V, model, ctx.orders)[0] - star(F, G, model)
                if residual:
                    return counterexample(residual, V=V, F=F, G=G)
            return None

        def lagrangian_axioms() -> Outcome:
            L0 = free_lagrangian(model, N)
            validate_lagrangian(L0, model, samples=ctx.heavy_samples, seed=ctx.seed)
            validate_lagrangian(interaction_lagrangian(model, V), model, samples=ctx.heavy_samples, seed=ctx.seed)
            if not lagrangian_equiv(L0, L0, model, seed=ctx.seed).equivalent:
                return {'residual': 'L0 is not equivalent to itself'}
            doubled = Lagrangian(lambda f: L0(f).scale(2), 1, 'L0x2')
            verdict = lagrangian_equiv(L0, doubled, model, seed=ctx.seed)
            if verdict.equivalent:
                raise LagrangianAxiomError("L0 and 2·L0 were reported equivalent")
            return None

        return [
            Check('propagator symmetries and causal support', 'Δ = Δ_R − Δ_A, Δ_D = ½(Δ_R + Δ_A)', propagator_symmetries),
            Check('window Green identities', 'Δ_D·K = 1 and Δ·K = 0 on window columns', window_green),
            Check('two-point ⋆ and ·_T values', 'star product and time-ordered product of linear fields', two_point),
            Check('T(F·G) = TF ·_T TG', 'time-ordering operator T = exp(iℏΓ_{Δ_D})', t_intertwines),
            Check('·_T graded-commutative and associative', 'time-ordered product', t_product_algebra),
            Check('⋆ associative', 'star product', star_associative),
            Check('causal factorization', 'F ·_T G = F ⋆ G when F is later than G', causal_factorization),
            Check('[F,G]_⋆ = iℏ Peierls + O(ℏ²)', 'Peierls bracket as the classical limit', commutator_peierls),
            Check('⋆ involution', '(F⋆G)* = G*⋆F*', star_involution),
            Check('R_V⁻¹ ∘ R_V = id', 'retarded Møller map', retarded_round_trip),
            Check('Bogoliubov formula', 'R_V(F) = −iℏ d/dμ S(V)^{⋆−1}⋆S(V+μF)', bogoliubov),
            Check('interacting ⋆ at zeroth order', 'interacting star product', interacting_star_free_limit),
            Check('generalized Lagrangians', 'support and additivity of Lagrangians; equivalence', lagrangian_axioms),
        ]

    def plan_bv(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        N = ctx.N
        S = model.S0(N)
        hbar_i = i_hbar(N)

        def nilpotency() -> Outcome:
            rng = ctx.rng('nilpotency')
            for _ in range(max(ctx.samples, 1)):
                F = self._random(rng, degree=4, max_antifields=3)
                residual = bv_laplacian(bv_laplacian(F))
                if residual:
                    return counterexample(residual, F=F)
            return None

        def bracket_forms() -> Outcome:
            rng = ctx.rng('bracket forms')
            for _ in range(ctx.samples):
                P, Q = self._random(rng, max_antifields=2), self._random(rng, max_antifields=2)
                for mode in ('geometric', 'timeordered', 'star'):
                    residual = antibracket(P, Q, model, mode) - bracket_direct(P, Q, model, mode)
                    if residual:
                        return counterexample(residual, P=P, Q=Q, mode=mode)
            return None

        def laplacian_of_bracket() -> Outcome:
            rng = ctx.rng('laplacian of bracket')
            for _ in range(ctx.samples):
                P, Q = self._graded(rng), self._random(rng, max_antifields=2)
                sign = -1 if P.parity() else 1
                lhs = bv_laplacian(antibracket(P, Q))
                rhs = -antibracket(bv_laplacian(P), Q) - antibracket(P, bv_laplacian(Q)).scale(sign)
                if lhs != rhs:
                    return counterexample(lhs - rhs, P=P, Q=Q)
            return None

        def t_bracket() -> Outcome:
            rng = ctx.rng('T bracket')
            for _ in range(ctx.samples):
                P, Q = self._random(rng, max_antifields=2), self._random(rng, max_antifields=2)
                residual = antibracket(P, Q, model, 'timeordered') - timeordered_bracket_conjugated(P, Q, model)
                if residual:
                    return counterexample(residual, P=P, Q=Q)
            return None

        def schwinger_dyson() -> Outcome:
            rng = ctx.rng('schwinger dyson')
            for _ in range(ctx.samples):
                X = self._window_field(rng)
                lhs = bv_laplacian(X).scale(hbar_i)
                rhs = antibracket(X, S, model, 'timeordered') - antibracket(X, S, model, 'star')
                if lhs != rhs:
                    return counterexample(lhs - rhs, X=X)
            return None

        def free_action_star() -> Outcome:
            rng = ctx.rng('free action star')
            for _ in range(ctx.samples):
                coefficients = {x: self._window_field(rng, max_antifields=0) for x in sorted(model.window)}
                pointwise = Functional.sum((pointwise_product(c, model.kinetic_form(x, N))
                                            for x, c in coefficients.items()), N)
                starred = Functional.sum((star(c, model.kinetic_form(x, N), model)
                                          for x, c in coefficients.items()), N)
                if pointwise != starred:
                    return counterexample(pointwise - starred,
                                          **{f"X_{x}": c for x, c in coefficients.items()})
            return None

        def time_ordered_derivation() -> Outcome:
            rng = ctx.rng('time ordered derivation')
            for _ in range(ctx.samples):
                X, Y = self._window_field(rng), self._window_field(rng)
                sign = -1 if X.parity() else 1
                lhs = (antibracket(tprod(X, Y, model), S, model, 'star')
                       - tprod(antibracket(X, S, model, 'star'), Y, model)
                       - tprod(X, antibracket(Y, S, model, 'star'), model).scale(sign))
                rhs = -antibracket(X, Y, model, 'timeordered').scale(hbar_i)
                if lhs != rhs:
                    return counterexample(lhs - rhs, X=X, Y=Y)
            return None

        def koszul_maps() -> Outcome:
            rng = ctx.rng('koszul maps')
            L0 = free_lagrangian(model, N)
            for _ in range(ctx.samples):
                X = self._window_field(rng, sites=ctx.interior or None)
                classical = koszul(X, S, model)
                residual = koszul(X, S, model, 'timeordered') - classical - bv_laplacian(X).scale(hbar_i)
                if residual:
                    return counterexample(residual, X=X, check='δᵀ = δ + iℏ△')
                residual = koszul(X, L0, model) - classical
                if residual:
                    return counterexample(residual, X=X, check='Lagrangian Koszul map')
            return None

        def onshell() -> Outcome:
            rng = ctx.rng('onshell')
            for x in sorted(model.window):
                F = self._random(rng, max_antifields=0)
                eom = model.kinetic_form(x, N)
                for value in (eom, pointwise_product(F, eom)):
                    reduced = onshell_reduce(value, model)
                    if reduced:
                        return counterexample(reduced, F=value)
            return None

        checks = [
            Check('△² = 0', 'BV Laplacian is nilpotent', nilpotency),
            Check('antibracket: △-defect equals pairing form', 'antibracket as the failure of △ to be a derivation',
                  bracket_forms),
            Check('△{P,Q} = −{△P,Q} − (−1)^{|P|}{P,△Q}', 'BV algebra: △ is a derivation of the bracket',
                  laplacian_of_bracket),
            Check('{P,Q}_T = T{T⁻¹P,T⁻¹Q}', 'time-ordered antibracket', t_bracket),
            Check('Schwinger–Dyson: iℏ△X = {X,S₀}_T − {X,S₀}_⋆', 'Schwinger–Dyson identity', schwinger_dyson),
            Check('Σ X_x·∂_xS₀ = Σ X_x⋆∂_xS₀', 'free field equation under the star product', free_action_star),
            Check('{X·_TY,S₀}_⋆ defect = −iℏ{X,Y}_T', 'time-ordered product and the quantum Koszul operator',
                  time_ordered_derivation),
            Check('Koszul maps', 'δᵀ_S = δ_S + iℏ△; Lagrangian and action Koszul maps agree', koszul_maps),
            Check('on-shell reduction kills the field equations', 'on-shell ideal of the free field equations', onshell),
        ]

        V = ctx.interaction()
        if ctx.theta0 is not None:
            theta = ctx.theta0.pad(N)

            def theta_identity() -> Outcome:
                rng = ctx.rng('theta identity')
                for _ in range(ctx.heavy_samples):
                    X = self._window_field(rng, max_antifields=1)
                    result = theta_identity_check(V, X, theta, model, ctx.orders)
                    if not result.holds:
                        return counterexample(result.residual, V=V, X=X)
                return None

            checks.append(Check('{e^{iV/ℏ}·_T X, θ₀}_T = {…, θ₀}_⋆', 'θ₀ relations for the trivial pair',
                                theta_identity))
        if ctx.psi is not None:
            psi = ctx.psi.pad(N)

            def gauge_independence() -> Outcome:
                result = gauge_independence_check(V, psi, model, ctx.orders)
                if not result.qme_covariant or result.smatrix_independent is False:
                    return counterexample(result.smatrix_onshell_residual, V=V, psi=psi,
                                          covariant=result.qme_covariant)
                return None

            checks.append(Check('master equation is gauge independent', 'gauge-fixing fermion α_ψ = exp{ψ,·}_T',
                                gauge_independence))
        return checks

    def plan_qme(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        orders = ctx.orders
        V = ctx.interaction()
        V_af = ctx.interaction_with_antifield()
        S = model.S0(ctx.N)

        def residual_vanishes() -> Outcome:
            residual = qme_residual(V, model, orders)
            return None if residual.is_zero() else counterexample(residual, V=V)

        def koszul_and_bracket_forms() -> Outcome:
            for interaction in (V, V_af):
                residual = qme_residual(interaction, model, orders) - qme_bracket_form(interaction, model, orders)
                if not residual.is_zero():
                    return counterexample(residual, V=interaction)
            return None

        def nilpotent_s() -> Outcome:
            rng = ctx.rng('qbv nilpotent')
            for _ in range(ctx.heavy_samples):
                X = self._window_field(rng, sites=ctx.interior or None)
                twice = qbv_hat(qbv_hat(X, V, model, orders), V, model, orders)
                if not twice.is_zero():
                    return counterexample(twice, V=V, X=X)
            return None

        def intertwining() -> Outcome:
            rng = ctx.rng('qbv intertwining')
            for _ in range(ctx.heavy_samples):
                X = self._window_field(rng, sites=ctx.interior or None)
                lhs = retarded_map(V, qbv_hat(X, V, model, orders), model, orders)
                rhs = retarded_map(V, X, model, orders).map(lambda F: antibracket(F, S, model, 'star'))
                if lhs != rhs:
                    return counterexample(lhs - rhs, V=V, X=X)
            return None

        return [
            Check('QME holds for the interaction', 'quantum master equation {e_T^{iV/ℏ}, S₀}_⋆ = 0',
                  residual_vanishes),
            Check('QME: Koszul form equals bracket form', '½{S+V,S+V}_T = iℏ△(S+V)', koszul_and_bracket_forms),
            Check('ŝ² = 0', 'quantum BV operator is nilpotent when the QME holds', nilpotent_s),
            Check('R_V ∘ ŝ = {·,S₀}_⋆ ∘ R_V', 'quantum BV operator intertwined by the retarded map', intertwining),
        ]

    def plan_scale(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        family = ScaleFamily(model)
        V_af = ctx.interaction_with_antifield()
        checks = []
        for scale in ctx.scales:
            mode = ScaleMode(family, Rational(scale))

            def regularized(mode=mode) -> Outcome:
                three_term = qme_residual(V_af, model, ctx.orders, variant='regularized', scale=mode)
                bracket = regularized_qme_bracket_form(V_af, model, ctx.orders, mode)
                residual = three_term - bracket
                return None if residual.is_zero() else counterexample(residual, V=V_af, scale=mode.scale)

            def t_lambda_product(mode=mode) -> Outcome:
                rng = ctx.rng(f"T_Λ product {mode.scale}")
                for _ in range(ctx.samples):
                    F, G = self._random(rng), self._random(rng)
                    lhs = family.t_lambda(pointwise_product(F, G), mode.scale)
                    rhs = family.tprod_lambda(family.t_lambda(F, mode.scale), family.t_lambda(G, mode.scale),
                                              mode.scale)
                    if lhs != rhs:
                        return counterexample(lhs - rhs, F=F, G=G, scale=mode.scale)
                return None

            checks.append(Check(f'regularized QME at Λ = {scale}', 'regularized QME: three-term form = bracket form',
                                regularized))
            checks.append(Check(f'T_Λ(F·G) = T_ΛF ·_Λ T_ΛG at Λ = {scale}', 'scale-Λ time ordering',
                                t_lambda_product))
        return checks

    def plan_renorm(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        N = ctx.N

        def beta_bijective() -> Outcome:
            rng = ctx.rng('beta')
            for _ in range(ctx.samples):
                F = self._random(rng, max_antifields=0)
                tensor = beta_decompose(F, max_rank=3)
                if m_product(tensor) != F:
                    return counterexample(m_product(tensor) - F, F=F, check='m∘β')
                if beta_decompose(m_product(tensor)) != tensor:
                    return counterexample(F, F=F, check='β∘m')
                if beta_reconstruct(F, max_rank=3) != tensor:
                    return counterexample(F, F=F, check='reconstruction')
            return None

        def z_axioms() -> Outcome:
            report = z_validate(ctx.Z, model, samples=ctx.heavy_samples, seed=ctx.seed)
            if not report.valid:
                return {'Z': ctx.Z.name, 'residual': '; '.join(report.failures)}
            shifted = RenMap(shift=HbarSeries.monomial(1, 1, 1), name='shifted')
            report = z_validate(shifted, model, samples=ctx.heavy_samples, seed=ctx.seed)
            if report.valid or not any(f.startswith('Z1') for f in report.failures):
                return {'Z': shifted.name, 'residual': 'a constant shift passed Z1'}
            return None

        family = make_tn_family(model, ctx.Z, samples=ctx.heavy_samples, seed=ctx.seed)
        identity = make_tn_family(model)
        contracted = list(ctx.Z.species) or ctx.propagating_names
        window = sorted(model.window)

        def same_site_locals(rng: random.Random, count: int) -> List[Functional]:
            sites = [rng.choice(window) for _ in range(count)]
            return [self._random(rng, sites=[s], species=contracted, max_antifields=0) for s in sites]

        def tren_algebra() -> Outcome:
            rng = ctx.rng('tren algebra')
            for _ in range(ctx.heavy_samples):
                A, B, C = self._graded(rng), self._graded(rng), self._random(rng, max_antifields=1)
                sign = -1 if A.parity() and B.parity() else 1
                residual = tren_product(A, B, family) - tren_product(B, A, family).scale(sign)
                if residual:
                    return counterexample(residual, A=A, B=B, check='commutativity')
                left = tren_product(tren_product_tensor(A, B, family), C, family)
                right = tren_product(A, tren_product_tensor(B, C, family), family)
                if left != right:
                    return counterexample(left - right, A=A, B=B, C=C, check='associativity')
                residual = (tren_product(tren_product(A, B, identity), C, identity)
                            - tren_product(A, tren_product(B, C, identity), identity))
                if residual:
                    return counterexample(residual, A=A, B=B, C=C, check='associativity for Z = id')
                residual = tren_product(A, Functional.one(N), family) - A
                if residual:
                    return counterexample(residual, A=A, check='unit')
            return None

        def iterated_products() -> Outcome:
            rng = ctx.rng('iterated products')
            for _ in range(ctx.heavy_samples):
                locals_ = same_site_locals(rng, 3)
                chained = tren_multiply(locals_, family)
                direct = tn_apply(family, locals_)
                if chained != direct:
                    return counterexample(chained - direct, **{f"F{i}": F for i, F in enumerate(locals_)})
                allowed = frozenset().union(*(F.support() for F in locals_))
                if not direct.support() <= allowed:
                    return counterexample(direct, check='supp T_n ⊆ ∪ supp F_i')
            sp = model.primary.name
            a, b = model.field(sp, window[0], N), model.field(sp, window[-1], N)
            residual = tren_product(a, b, identity) - tprod(a, b, model)
            return None if not residual else counterexample(residual, F=a, G=b, check='Z = id')

        def smatrix_theorem() -> Outcome:
            V = ctx.interaction()
            lhs = smatrix_from_tn(V, family, ctx.orders)
            rhs = renormalized_smatrix_stored(V, family, ctx.orders)
            if lhs != rhs:
                return counterexample(lhs - rhs, V=V, Z=ctx.Z.name)
            carried = tren_exponential(V, family, ctx.orders)
            if carried != rhs:
                return counterexample(carried - rhs, V=V, Z=ctx.Z.name, check='e_{T_ren}^{iV/ℏ}')
            return None

        def tren_causal() -> Outcome:
            rng = ctx.rng('tren causal')
            order = list(model.time_order)
            for _ in range(ctx.heavy_samples):
                cut = rng.randint(1, len(order) - 1)
                F = self._random(rng, sites=order[cut:])
                G = self._random(rng, sites=order[:cut])
                residual = tren_product(F, G, family) - star(F, G, model)
                if residual:
                    return counterexample(residual, later=F, earlier=G)
            return None

        checks = [
            Check('β∘m = id and m∘β = id', 'bijectivity of m on symmetric tensors of local functionals',
                  beta_bijective),
            Check('finite renormalization axioms', 'Stückelberg–Petermann axioms Z1–Z4 and supp Z_V(F) ⊆ supp F',
                  z_axioms),
            Check('·_{T_ren} commutative, associative, unital', 'renormalized time-ordered product', tren_algebra),
            Check('iterated ·_{T_ren} of locals equals T_n', 'F₁·_{T_ren}…·_{T_ren}F_n = T_n(F₁,…,F_n)',
                  iterated_products),
            Check('Ŝ = S∘Z', 'main theorem of renormalization; e_{T_ren}^{iV/ℏ} = Σ T_n(V,…,V)/n!', smatrix_theorem),
            Check('·_{T_ren} factorizes causally', 'causal factorization of T_n', tren_causal),
        ]
        if not any(model.kernel_delta_d(x, x) for x in model.sites):

            def bracket_for_identity() -> Outcome:
                rng = ctx.rng('tren bracket')
                for _ in range(ctx.samples):
                    P, Q = self._random(rng, max_antifields=2), self._random(rng, max_antifields=2)
                    residual = tren_bracket(P, Q, identity) - antibracket(P, Q, model, 'timeordered')
                    if residual:
                        return counterexample(residual, P=P, Q=Q)
                return None

            checks.append(Check('{P,Q}_{T_ren} = {P,Q}_T for Z = id', 'antibracket carried in tensor form',
                                bracket_for_identity))
        return checks

    def plan_anomaly(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        orders = ctx.orders
        N = ctx.N
        V = ctx.interaction()
        S = model.S0(N)
        family = make_tn_family(model, ctx.Z, samples=ctx.heavy_samples, seed=ctx.seed)
        identity = make_tn_family(model)
        zero = Functional.zero(N)
        window = sorted(model.window)
        name = (list(ctx.Z.species) or [model.primary.name])[0]
        anti = f"{name}*"

        def free_anchor() -> Outcome:
            rng = ctx.rng('anomaly anchor')
            for _ in range(ctx.samples):
                X = self._window_field(rng)
                value = anomaly_extract(zero, X, family, orders).value
                expected = operand_series(bv_laplacian(X).scale(i_hbar(N)), orders)
                if value != expected:
                    return counterexample(value - expected, X=X)
            return None

        def unrenormalized_vanishes() -> Outcome:
            for x in window:
                X = model.field(f"{model.primary.name}*", x, N)
                value = anomaly_extract(V, X, identity, orders).value
                if not value.is_zero():
                    return counterexample(value, V=V, X=X)
            return None

        def counterterm_anomaly() -> Outcome:
            seen = False
            for x in window:
                candidates = [model.field(anti, x, N),
                              pointwise_product(model.field(anti, x, N), model.field(name, x, N))]
                candidates += [pointwise_product(model.field(anti, x, N), model.field(name, y, N))
                               for y in (x - 1, x + 1) if y in model.window]
                for X in candidates:
                    result = anomaly_extract(V, X, family, orders)
                    allowed = X.support() & V.support()
                    if not result.induced.support() <= allowed:
                        return counterexample(result.induced, V=V, X=X, allowed=sorted(allowed))
                    if result.induced.is_zero():
                        continue
                    seen = True
                    if leading_hbar_order(result.induced) != 1:
                        return counterexample(result.induced, V=V, X=X,
                                              leading_order=leading_hbar_order(result.induced))
            if not seen and ctx.Z.generators(V):
                return {'V': show(V), 'residual': 'no counterterm anomaly for any X on the window'}
            return None

        def linear_in_x() -> Outcome:
            rng = ctx.rng('anomaly linear')
            for _ in range(ctx.heavy_samples):
                X, Y = self._local_field(rng), self._local_field(rng)
                lhs = anomaly_extract(V, X + Y, family, orders).value
                rhs = anomaly_extract(V, X, family, orders).value + anomaly_extract(V, Y, family, orders).value
                if lhs != rhs:
                    return counterexample(lhs - rhs, X=X, Y=Y)
            return None

        def free_qbv() -> Outcome:
            rng = ctx.rng('free qbv')
            for _ in range(ctx.heavy_samples):
                X = self._window_field(rng)
                lhs = qbv_ren(X, zero, family, orders)
                rhs = operand_series(antibracket(X, S, model, 'star'), orders)
                if lhs != rhs:
                    return counterexample(lhs - rhs, X=X)
            return None

        def scalar_residual() -> Outcome:
            residual = qme_ren_residual(V, identity, orders)
            return None if residual.is_zero() else counterexample(residual, V=V)

        def direct_form() -> Outcome:
            rng = ctx.rng('qbv direct')
            for _ in range(ctx.heavy_samples):
                X = self._local_field(rng)
                residual = qbv_ren(X, V, family, orders) - qbv_ren_direct(X, V, family, orders)
                if not residual.is_zero():
                    return counterexample(residual, V=V, X=X)
            return None

        def renormalized_nilpotent() -> Outcome:
            rng = ctx.rng('qbv ren nilpotent')
            for _ in range(ctx.heavy_samples):
                X = self._local_field(rng, sites=ctx.interior or None)
                twice = qbv_ren_direct(qbv_ren_direct(X, V, family, orders), V, family, orders)
                if not twice.is_zero():
                    return counterexample(twice, V=V, X=X)
            return None

        def renormalized_intertwining() -> Outcome:
            rng = ctx.rng('qbv ren intertwining')
            for _ in range(ctx.heavy_samples):
                X = self._local_field(rng, sites=ctx.interior or None)
                lhs = tren_retarded_map(V, qbv_ren(X, V, family, orders), family, orders)
                rhs = tren_retarded_map(V, X, family, orders).map(lambda F: antibracket(F, S, model, 'star'))
                if lhs != rhs:
                    return counterexample(lhs - rhs, V=V, X=X)
            return None

        def wess_zumino() -> Outcome:
            interaction = V if ctx.theta0 is None else V + ctx.theta0.pad(N)
            sites = ctx.interior or window
            Y = model.field(f"{model.primary.name}*", sites[len(sites) // 2], N)
            result = wess_zumino_check(interaction, Y, family, orders)
            if not result.holds:
                return counterexample(result.lhs - result.rhs, V=interaction, Y=Y)
            return None

        checks = [
            Check('△_0(X) = iℏ△X', 'anomalous Master Ward identity at V = 0 (Schwinger–Dyson anchor)', free_anchor),
            Check('no anomaly without counterterms', 'anomalous Master Ward identity for Z = id',
                  unrenormalized_vanishes),
            Check('△_V linear in X', 'anomaly is a linear map', linear_in_x),
            Check('ŝ at V = 0 is {·,S₀}_⋆', 'renormalized quantum BV operator', free_qbv),
            Check('renormalized QME for an antifield-free interaction', 'renormalized QME', scalar_residual),
            Check('ŝX = Φ_V⁻¹ e^{−iZ(V)/ℏ}·_T{e^{iZ(V)/ℏ}·_T Φ_V X, S₀}_⋆', 'renormalized quantum BV operator',
                  direct_form),
            Check('renormalized ŝ² = 0', 'renormalized quantum BV operator is nilpotent', renormalized_nilpotent),
            Check('R_V ∘ ŝ = {·,S₀}_⋆ ∘ R_V (renormalized)', 'renormalized intertwining of ŝ',
                  renormalized_intertwining),
            Check('Wess–Zumino consistency', '{△_V X, V+S₀}_{T_ren} = −△_V(△_V X)', wess_zumino),
        ]
        if not ctx.Z.is_identity:
            checks.insert(2, Check('counterterm anomaly is local, order ℏ¹',
                                   'supp △_V(X) ⊆ supp X ∩ supp V', counterterm_anomaly))

        absorb_orders = PerturbativeOrders(max(1, orders.hbar_order), max(3, orders.v_order))
        exact, obstructed = ctx.functionals.get('S1_exact'), ctx.functionals.get('S1_obstructed')
        if exact is not None:

            def absorb_exact() -> Outcome:
                S1 = exact.pad(absorb_orders.hbar_order)
                result = absorb_anomaly(S1, family, absorb_orders, degree_bound=ctx.degree_bound)
                if not result.absorbed:
                    return counterexample(result.residual if result.obstruction is None else result.obstruction,
                                          S1=S1, order=result.obstruction_order)
                return None

            checks.append(Check('anomaly absorbed into W', 'W-absorption order by order in ℏ', absorb_exact))
        if obstructed is not None:

            def absorb_obstructed() -> Outcome:
                S1 = obstructed.pad(absorb_orders.hbar_order)
                result = absorb_anomaly(S1, family, absorb_orders, degree_bound=ctx.degree_bound)
                if result.absorbed or result.obstruction is None:
                    return counterexample(result.residual, S1=S1, check='expected an obstruction')
                logger.info(f"  obstruction at ℏ^{result.obstruction_order}: {result.obstruction.pretty()}")
                return None

            checks.append(Check('non-exact anomaly is reported as an obstruction',
                                'anomaly classes in the cohomology of s', absorb_obstructed))
        gauge = ctx.functionals.get('S1')
        if gauge is not None and not ctx.Z.is_identity:

            def absorb_into_z() -> Outcome:
                S1 = gauge.pad(absorb_orders.hbar_order)
                result = absorb_anomaly(S1, family, absorb_orders, degree_bound=max(ctx.degree_bound, 4))
                if not result.absorbed:
                    return counterexample(result.residual if result.obstruction is None else result.obstruction,
                                          S1=S1, order=result.obstruction_order)
                redefined = redefine_renormalization(result, S1, family, absorb_orders)
                if not redefined.equivalent:
                    return counterexample(redefined.residual, S1=S1, Z=redefined.Z.name)
                return None

            checks.append(Check(f'{ctx.Z.name}-induced anomaly absorbed and traded for a new Z',
                                'W = S₁ + ℏW₁ + … and Z′ with S₁ solving the Z′-master equation', absorb_into_z))
        return checks

    def plan_rg(self) -> List[Check]:
        ctx = self.context
        model = ctx.model
        orders = ctx.orders
        V = ctx.interaction()

        def covariance(Z: RenMap) -> Callable[[], Outcome]:
            def run() -> Outcome:
                report = rg_covariance_check(V, Z, model, orders, samples=ctx.heavy_samples, seed=ctx.seed)
                if not report.passed:
                    return {'S1': show(V), 'Z': Z.name, 'residual': '; '.join(report.failures)}
                return None
            return run

        def adiabatic() -> Outcome:
            family = make_tn_family(model, ctx.Z, samples=ctx.heavy_samples, seed=ctx.seed)
            L0 = free_lagrangian(model, ctx.N)
            zero = Lagrangian(lambda f: Functional.zero(ctx.N), 1, 'zero')
            for L1 in (interaction_lagrangian(model, V), zero):
                report = adiabatic_qme_check(L0, L1, family, orders, samples=ctx.heavy_samples, seed=ctx.seed)
                for sample in report.samples:
                    if not sample.contained or not sample.interior_agrees:
                        return {'L1': L1.name, 'f': str(sample.f), 'f1': str(sample.f1),
                                'residual': f"support {sorted(sample.residual_support)} "
                                            f"outside {sorted(sample.boundary)}"}
            return None

        return [
            Check('RG covariance with Z = id', 'ŝ_{Z(S₁)}∘Z¹ = Z¹∘ŝ′_{S₁}', covariance(RenMap(name='id'))),
            Check(f'RG covariance with {ctx.Z.name}', 'Z(S₁) solves the QME of the Z-corrected family',
                  covariance(ctx.Z)),
            Check('extended QME supported on the cutoff boundary', 'algebraic adiabatic limit: ⊂ supp df ∪ supp df₁',
                  adiabatic),
        ]

    # -- execution ----------------------------------------------------------

    def _execute(self, suite: str, check: Check) -> CheckRecord:
        try:
            outcome = check.run()
        except Exception as e:
            logger.error(f"  ✗ {check.identity} raised {type(e).__name__}: {e}", exc_info=True)
            return CheckRecord(suite, check.identity, check.anchor, ERROR,
                               {'error': f"{type(e).__name__}: {e}"})
        if outcome is None:
            logger.info(f"  ✓ {check.identity}")
            return CheckRecord(suite, check.identity, check.anchor, PASS)
        logger.warning(f"  ✗ {check.identity}")
        return CheckRecord(suite, check.identity, check.anchor, FAIL, outcome)

    def run_suite(self, suite: str) -> List[CheckRecord]:
        logger.info(f"Verifying suite '{suite}'...")
        try:
            plan = getattr(self, SUITES[suite][1])()
        except BVLatticeError as e:
            logger.error(f"  ✗ suite {suite} could not be set up: {e}")
            return [CheckRecord(suite, 'suite setup', SUITES[suite][0], ERROR, {'error': str(e)})]
        return [self._execute(suite, check) for check in plan]

    def run(self, suites: Sequence[str], jobs: int = 1) -> List[CheckRecord]:
        """Run the named suites and merge their records in the order given."""
        logger.info("=" * 60)
        logger.info(f"Checking {self.context.model.name} at orders "
                    f"(ℏ^{self.context.orders.hbar_order}, λ^{self.context.orders.v_order})")
        logger.info("=" * 60)
        if jobs > 1 and len(suites) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(self.run_suite, suites))
        else:
            results = [self.run_suite(s) for s in suites]
        self.records = [record for batch in results for record in batch]

        passed = sum(1 for r in self.records if r.passed)
        logger.info("=" * 60)
        logger.info("Verification Summary")
        logger.info("=" * 60)
        for record in self.records:
            status = "✓ PASS" if record.passed else "✗ FAIL"
            logger.info(f"  {status}: {record.suite} / {record.identity}")
        logger.info("=" * 60)
        logger.info(f"Results: {passed}/{len(self.records)} checks passed")
        logger.info("=" * 60)
        return self.records


SUITES: Dict[str, Tuple[str, str]] = {
    'algebra': ('graded algebra, left derivatives and ℏ-series', 'plan_algebra'),
    'products': ('propagators, ⋆ and ·_T, causal factorization, retarded map', 'plan_products'),
    'bv': ('BV Laplacian, antibrackets, Schwinger–Dyson, Koszul maps, gauge fixing', 'plan_bv'),
    'qme': ('quantum master equation and the quantum BV operator', 'plan_qme'),
    'scale': ('regularized products and master equation at scale Λ', 'plan_scale'),
    'renorm': ('β, finite renormalizations, T_ren and Ŝ = S∘Z', 'plan_renorm'),
    'anomaly': ('anomalous Master Ward identity, Wess–Zumino, anomaly absorption', 'plan_anomaly'),
    'rg': ('renormalization-group covariance and the adiabatic master equation', 'plan_rg'),
}


def resolve_suites(names: Sequence[str]) -> List[str]:
    """Expand ``all`` and keep registry order; unknown names raise KeyError."""
    chosen = set()
    for name in names:
        if name == 'all':
            chosen |= set(SUITES)
        elif name in SUITES:
            chosen.add(name)
        else:
            raise KeyError(name)
    return [s for s in SUITES if s in chosen]
