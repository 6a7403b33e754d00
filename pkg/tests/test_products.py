"""
Tests for the star and time-ordered products, S-matrices and the retarded map.
"""
import random

import pytest
from hypothesis import given, settings

from bvlattice.errors import (
    GradingError,
    NegativeHbarPowerError,
    PreconditionError,
    SupportError,
    TruncationMismatchError,
)
from bvlattice.graded_core import I_UNIT, Functional, pointwise_product, scalar
from bvlattice.lattice_model import random_functional, wave_chain
from bvlattice.products import (
    CouplingSeries,
    PerturbativeOrders,
    alpha_h,
    bogoliubov_derivative,
    bogoliubov_smatrix,
    interacting_star,
    interaction_series,
    involution,
    is_later,
    peierls_bracket,
    retarded_map,
    smatrix,
    star,
    star_commutator,
    star_h,
    stored_exponent,
    time_order,
    timeorder_vectorfield,
    timeordered_derivation,
    tprod,
    unscale,
)
from tests.conftest import functionals, homogeneous

W5 = wave_chain(5)


def hbar(power, order, value=1):
    return Functional.hbar(power, order, value)


@pytest.mark.unit
class TestTwoPointValues:
    """Exact two-point contractions on W5."""

    def test_star_of_linear_fields(self, w5):
        """φ(1) ⋆ φ(3) = φ(1)φ(3) − iℏ."""
        a, b = w5.field('phi', 1, 2), w5.field('phi', 3, 2)
        assert star(a, b, w5) == pointwise_product(a, b) - hbar(1, 2, I_UNIT)

    def test_tprod_of_linear_fields(self, w5):
        """φ(1) ·_T φ(3) = φ(1)φ(3) + iℏ."""
        a, b = w5.field('phi', 1, 2), w5.field('phi', 3, 2)
        assert tprod(a, b, w5) == pointwise_product(a, b) + hbar(1, 2, I_UNIT)

    def test_commutator_of_linear_fields(self, w5):
        """[φ(1), φ(3)]_⋆ = iℏΔ(1,3) = −2iℏ."""
        a, b = w5.field('phi', 1, 1), w5.field('phi', 3, 1)
        assert star_commutator(a, b, w5) == hbar(1, 1, scalar(-2) * I_UNIT)

    def test_truncation_at_order_zero(self, w5):
        """At ℏ-order 0 both products are pointwise."""
        a, b = w5.field('phi', 1, 0), w5.field('phi', 3, 0)
        assert star(a, b, w5) == tprod(a, b, w5) == pointwise_product(a, b)

    def test_time_order_of_square(self, w5):
        """T(φ(2)²) = φ(2)² since Δ_D vanishes on the diagonal."""
        g = w5.field('phi', 2, 2)
        assert time_order(pointwise_product(g, g), w5) == pointwise_product(g, g)

    def test_time_order_inverse(self, w5):
        """T⁻¹∘T = id on φ(1)²φ(3)²."""
        a, b = w5.field('phi', 1, 2), w5.field('phi', 3, 2)
        F = pointwise_product(pointwise_product(a, a), pointwise_product(b, b))
        assert time_order(time_order(F, w5), w5, 'inverse') == F

    def test_bad_direction(self, w5):
        """Unknown directions are rejected."""
        with pytest.raises(PreconditionError):
            time_order(w5.field('phi', 1, 0), w5, 'sideways')

    def test_mismatched_orders(self, w5):
        """Products need a common truncation."""
        with pytest.raises(TruncationMismatchError):
            star(w5.field('phi', 1, 1), w5.field('phi', 2, 2), w5)


@pytest.mark.validation
class TestProductLaws:
    """Random-sample checks of the product identities."""

    @settings(max_examples=25, deadline=None)
    @given(functionals(W5), functionals(W5))
    def test_time_ordering_intertwines(self, F, G):
        """T(F·G) = TF ·_T TG."""
        assert time_order(pointwise_product(F, G), W5) == tprod(time_order(F, W5), time_order(G, W5), W5)

    @settings(max_examples=25, deadline=None)
    @given(homogeneous(W5, max_antifields=2), homogeneous(W5, max_antifields=2), functionals(W5))
    def test_tprod_commutative_associative(self, F, G, H):
        """·_T is graded commutative and associative."""
        sign = -1 if F.parity() and G.parity() else 1
        assert tprod(F, G, W5) == tprod(G, F, W5).scale(sign)
        assert tprod(tprod(F, G, W5), H, W5) == tprod(F, tprod(G, H, W5), W5)

    @settings(max_examples=20, deadline=None)
    @given(functionals(W5), functionals(W5), functionals(W5))
    def test_star_associative(self, F, G, H):
        """⋆ is associative."""
        assert star(star(F, G, W5), H, W5) == star(F, star(G, H, W5), W5)

    def test_causal_factorization(self, w7):
        """F ·_T G = F ⋆ G when F is later than G."""
        rng = random.Random(7)
        for _ in range(20):
            cut = rng.randint(1, 6)
            F = random_functional(w7, rng, 2, sites=range(cut, 7))
            G = random_functional(w7, rng, 2, sites=range(0, cut))
            assert is_later(w7, F, G)
            assert tprod(F, G, w7) == star(F, G, w7)

    def test_commutator_classical_limit(self, w5):
        """The ℏ¹ part of [F,G]_⋆ is i times the Peierls bracket."""
        rng = random.Random(11)
        for _ in range(10):
            F = random_functional(w5, rng, 2, max_antifields=0)
            G = random_functional(w5, rng, 2, max_antifields=0)
            lhs = star_commutator(F, G, w5).hbar_coefficient(1)
            assert lhs == peierls_bracket(F, G, w5).hbar_coefficient(0).scale(I_UNIT)

    def test_star_involution(self, w5):
        """(F⋆G)* = G*⋆F*."""
        rng = random.Random(5)
        for _ in range(10):
            F = random_functional(w5, rng, 2, max_antifields=0).scale(I_UNIT)
            G = random_functional(w5, rng, 2, max_antifields=0)
            assert involution(star(F, G, w5)) == star(involution(G), involution(F), w5)

    def test_hadamard_deformation(self):
        """α_H intertwines ⋆ and ⋆_H, and α_H⁻¹∘α_H = id."""
        model = wave_chain(5, H=[[1 if abs(i - j) <= 1 else 0 for j in range(5)] for i in range(5)])
        a, b = model.field('phi', 1, 2), model.field('phi', 2, 2)
        F = pointwise_product(a, b)
        assert alpha_h(alpha_h(F, model), model, 'inverse') == F
        assert star_h(alpha_h(a, model), alpha_h(b, model), model) == alpha_h(star(a, b, model), model)


class TestTimeOrderedDerivation:
    """Vector fields under time ordering."""

    def test_derivation_of_linear_vector_field(self, w5):
        """∂ᵀ_Y F for Y = φ*(2) is the ordinary derivative on a linear F."""
        Y = w5.field('phi*', 2, 1)
        F = w5.field('phi', 2, 1).scale(3) + w5.field('phi', 1, 1)
        assert timeordered_derivation(Y, F, w5) == Functional.constant(3, 1)

    def test_vector_field_coefficients_are_time_ordered(self, w5):
        """T(φ‡(2)φ(1)φ(3)) = φ‡(2)(φ(1)φ(3) + iℏ); the antifield is a spectator."""
        anti = w5.field('phi*', 2, 2)
        a, b = w5.field('phi', 1, 2), w5.field('phi', 3, 2)
        X = pointwise_product(anti, pointwise_product(a, b))
        expected = X + pointwise_product(anti, hbar(1, 2, I_UNIT))
        assert timeorder_vectorfield(X, w5) == expected
        assert timeorder_vectorfield(expected, w5, 'inverse') == X

    def test_requires_vector_field(self, w5):
        """Terms without exactly one antifield are rejected."""
        with pytest.raises(PreconditionError):
            timeordered_derivation(w5.field('phi', 2, 1), w5.field('phi', 2, 1), w5)


@pytest.mark.integration
class TestSMatrixAndRetardedMap:
    """Interacting quantities at orders (2, 2)."""

    def test_interaction_must_vanish_at_zero_coupling(self, cubic, orders):
        """A series with a λ⁰ part is not an interaction."""
        with pytest.raises(PreconditionError):
            interaction_series(CouplingSeries.constant(cubic, 2), orders)

    def test_odd_interaction_has_no_exponent(self, cubic, orders, w5):
        """e^{iV/ℏ} is only defined for even V."""
        odd = Functional.from_product([w5.gen('phi*', 2), w5.gen('phi', 2), w5.gen('phi', 2)], 2)
        with pytest.raises(GradingError):
            stored_exponent(cubic + odd, orders)
        assert stored_exponent(cubic, orders)[1] == cubic.pad(orders.working_order).scale(I_UNIT)

    def test_smatrix_of_linear_field(self, w5):
        """e_T^{φ(1)} = 1 + φ(1) + (φ(1)² + iℏΔ_D(1,1))/2 = 1 + φ(1) + φ(1)²/2."""
        orders = PerturbativeOrders(1, 2)
        a = w5.field('phi', 1, 1)
        expected = Functional.one(1) + a + pointwise_product(a, a).scale('1/2')
        assert smatrix(a, w5, orders) == expected

    def test_bogoliubov_smatrix_without_background(self, w5):
        """S(0)^{⋆−1} ⋆ S(F) = S(F)."""
        orders = PerturbativeOrders(1, 2)
        a = w5.field('phi', 1, 1)
        assert bogoliubov_smatrix(Functional.zero(1), a, w5, orders) == smatrix(a, w5, orders)

    def test_retarded_map_free_limit(self, cubic, orders, w5):
        """R_V(F) starts with F."""
        F = w5.field('phi', 1, 2)
        assert retarded_map(cubic, F, w5, orders)[0] == F

    def test_retarded_map_round_trip(self, cubic, orders, w5):
        """R_V⁻¹∘R_V = id."""
        rng = random.Random(2)
        for _ in range(3):
            F = random_functional(w5, rng, 2)
            there = retarded_map(cubic, F, w5, orders)
            back = retarded_map(cubic, there, w5, orders, direction='inverse')
            assert back == CouplingSeries.constant(F, 2)

    def test_bogoliubov_formula(self, cubic, orders, w5):
        """The Bogoliubov derivative reproduces R_V."""
        rng = random.Random(4)
        for _ in range(3):
            F = random_functional(w5, rng, 2, max_antifields=0)
            assert bogoliubov_derivative(cubic, F, w5, orders) == retarded_map(cubic, F, w5, orders)

    def test_retarded_map_of_earlier_field(self, orders, w5):
        """R_V(φ(1)) = φ(1) when V is localized later than φ(1)."""
        g = w5.gen('phi', 3)
        V = Functional.from_product([g, g, g], 2, '1/6')
        F = w5.field('phi', 1, 2)
        assert retarded_map(V, F, w5, orders) == CouplingSeries.constant(F, 2)

    def test_interacting_star_at_zero_coupling(self, cubic, orders, w5):
        """F ⋆_V G reduces to F ⋆ G at λ⁰."""
        a, b = w5.field('phi', 1, 2), w5.field('phi', 3, 2)
        assert interacting_star(a, b, cubic, w5, orders)[0] == star(a, b, w5)

    def test_window_required(self, cubic, orders, w5):
        """Operands outside the window are rejected."""
        with pytest.raises(SupportError):
            retarded_map(cubic, w5.field('phi', 0, 2), w5, orders)

    def test_unscale_rejects_negative_powers(self):
        """A stored ℏ⁰ entry at λ¹ cannot be divided by ℏ."""
        orders = PerturbativeOrders(1, 1)
        stored = CouplingSeries([Functional.zero(2), Functional.constant(1, 2)])
        with pytest.raises(NegativeHbarPowerError):
            unscale(stored, orders)

    def test_coupling_series_sum(self, w5):
        """at_coupling sums the components."""
        a = w5.field('phi', 1, 0)
        series = CouplingSeries([a, a.scale(2), Functional.zero(0)])
        assert series.at_coupling() == a.scale(3)
        assert series.support() == frozenset({1})
