"""
Tests for the BV Laplacian, antibrackets, Koszul maps, the quantum BV
operator, master equations, scale-regularized brackets and gauge fixing.
"""
import random

import pytest
from hypothesis import given, settings
from sympy import I, Rational

from bvlattice.bv_core import (
    ScaleFamily,
    ScaleMode,
    antibracket,
    bracket_direct,
    bv_laplacian,
    check_theta_precondition,
    gauge_fermion_auto,
    gauge_independence_check,
    i_hbar,
    koszul,
    onshell_reduce,
    qbv_hat,
    qme_bracket_form,
    qme_residual,
    regularized_qme_bracket_form,
    theta0,
    theta_identity_check,
    timeordered_bracket_conjugated,
    transported_scale_bracket,
    trivial_pair_model,
)
from bvlattice.errors import GradingError, PreconditionError
from bvlattice.graded_core import I_UNIT, Functional, pointwise_product
from bvlattice.lattice_model import free_lagrangian, random_functional, wave_chain
from bvlattice.products import PerturbativeOrders, retarded_map, time_ordered_exponential, tprod
from tests.conftest import functionals, homogeneous

W5 = wave_chain(5)
TP = trivial_pair_model(5)


def vector_field_cubic(model, site, order=2):
    """φ(c)³/6 + ½φ‡(c)φ‡(c+1)φ(c)φ(c+1)."""
    phi, anti = model.gen('phi', site), model.gen('phi*', site)
    right, right_anti = model.gen('phi', site + 1), model.gen('phi*', site + 1)
    return (Functional.from_product([phi, phi, phi], order, '1/6')
            + Functional.from_product([anti, right_anti, phi, right], order, '1/2'))


@pytest.mark.unit
class TestLaplacian:
    """△ = Σ ∂_φ ∂_{φ‡}."""

    def test_pairing_of_field_and_antifield(self, w5):
        """△(φ‡(2)φ(2)) = 1."""
        X = Functional.from_product([w5.gen('phi*', 2), w5.gen('phi', 2)], 1)
        assert bv_laplacian(X) == Functional.one(1)

    def test_no_antifields_means_zero(self, cubic):
        assert bv_laplacian(cubic).is_zero()

    def test_unknown_mode(self, cubic):
        with pytest.raises(PreconditionError):
            bv_laplacian(cubic, 'sideways')

    @settings(max_examples=40, deadline=None)
    @given(functionals(TP, max_antifields=3, degree=4))
    def test_nilpotent(self, F):
        """△² = 0."""
        assert bv_laplacian(bv_laplacian(F)).is_zero()


@pytest.mark.unit
class TestAntibrackets:
    """Brackets as the △-defect of a product."""

    def test_canonical_pair(self, w5):
        """{φ‡(2), φ(2)} = 1 in both forms."""
        anti, phi = w5.field('phi*', 2, 0), w5.field('phi', 2, 0)
        assert antibracket(anti, phi) == Functional.one(0)
        assert bracket_direct(anti, phi) == Functional.one(0)

    def test_unknown_mode(self, w5):
        with pytest.raises(PreconditionError):
            antibracket(w5.field('phi', 1, 0), w5.field('phi', 2, 0), w5, 'sideways')

    def test_star_mode_needs_model(self, w5):
        with pytest.raises(PreconditionError):
            antibracket(w5.field('phi', 1, 0), w5.field('phi', 2, 0), None, 'star')

    @settings(max_examples=25, deadline=None)
    @given(functionals(W5, max_antifields=2), functionals(W5, max_antifields=2))
    def test_defect_equals_pairing_form(self, P, Q):
        """The △-defect and the pairing form agree for ·, ·_T and ⋆."""
        for mode in ('geometric', 'timeordered', 'star'):
            assert antibracket(P, Q, W5, mode) == bracket_direct(P, Q, W5, mode)

    @settings(max_examples=25, deadline=None)
    @given(functionals(W5, max_antifields=2), functionals(W5, max_antifields=2))
    def test_time_ordered_bracket_is_conjugated(self, P, Q):
        """{P,Q}_T = T{T⁻¹P, T⁻¹Q}."""
        assert antibracket(P, Q, W5, 'timeordered') == timeordered_bracket_conjugated(P, Q, W5)

    @settings(max_examples=30, deadline=None)
    @given(homogeneous(TP, max_antifields=2), functionals(TP, max_antifields=2))
    def test_laplacian_of_bracket(self, P, Q):
        """△{P,Q} = −{△P,Q} − (−1)^{|P|}{P,△Q}."""
        sign = -1 if P.parity() else 1
        expected = -antibracket(bv_laplacian(P), Q) - antibracket(P, bv_laplacian(Q)).scale(sign)
        assert bv_laplacian(antibracket(P, Q)) == expected

    def test_scale_mode_has_no_pairing_form(self, w5):
        mode = ScaleMode(ScaleFamily(w5), Rational(1))
        with pytest.raises(PreconditionError):
            bracket_direct(w5.field('phi*', 2, 0), w5.field('phi', 2, 0), w5, mode)


class TestKoszulMaps:
    """Classical and time-ordered Koszul operators of S₀."""

    def test_classical_koszul_of_antifield(self, w5):
        """δ_{S₀} φ‡(2) = (Kφ)(2)."""
        X = w5.field('phi*', 2, 2)
        assert koszul(X, w5.S0(2), w5) == w5.kinetic_form(2, 2)

    def test_time_ordered_koszul_adds_laplacian(self, w5):
        """δᵀ(φ‡(2)φ(2)) = φ(2)(Kφ)(2) + iℏ."""
        X = Functional.from_product([w5.gen('phi*', 2), w5.gen('phi', 2)], 2)
        expected = pointwise_product(w5.field('phi', 2, 2), w5.kinetic_form(2, 2)) + Functional.hbar(1, 2, I_UNIT)
        assert koszul(X, w5.S0(2), w5) + Functional.hbar(1, 2, I_UNIT) == expected
        assert koszul(X, w5.S0(2), w5, 'timeordered') == expected

    def test_lagrangian_and_action_agree(self, w5, rng):
        """A Lagrangian evaluated near supp X gives the action's Koszul map."""
        L0 = free_lagrangian(w5, 2)
        for _ in range(5):
            X = random_functional(w5, rng, 2, sites=[2], max_antifields=2)
            assert koszul(X, L0, w5) == koszul(X, w5.S0(2), w5)

    def test_schwinger_dyson(self, w5, rng):
        """iℏ△X = {X,S₀}_T − {X,S₀}_⋆ for X in the window."""
        S = w5.S0(2)
        for _ in range(10):
            X = random_functional(w5, rng, 2, max_antifields=2)
            lhs = bv_laplacian(X).scale(i_hbar(2))
            assert lhs == antibracket(X, S, w5, 'timeordered') - antibracket(X, S, w5, 'star')

    def test_time_ordered_product_defect(self, w5, rng):
        """{X·_TY, S₀}_⋆ − {X,S₀}_⋆·_TY − (−1)^{|X|}X·_T{Y,S₀}_⋆ = −iℏ{X,Y}_T."""
        S = w5.S0(2)
        for _ in range(8):
            X = random_functional(w5, rng, 2, max_antifields=2).parity_parts()[rng.randint(0, 1)]
            Y = random_functional(w5, rng, 2, max_antifields=2)
            sign = -1 if X and X.parity() else 1
            lhs = (antibracket(tprod(X, Y, w5), S, w5, 'star')
                   - tprod(antibracket(X, S, w5, 'star'), Y, w5)
                   - tprod(X, antibracket(Y, S, w5, 'star'), w5).scale(sign))
            assert lhs == -antibracket(X, Y, w5, 'timeordered').scale(i_hbar(2))

    def test_unknown_mode(self, w5):
        with pytest.raises(PreconditionError):
            koszul(w5.field('phi*', 2, 0), w5.S0(0), w5, 'sideways')


class TestOnShell:
    """Reduction modulo the free field equations on the window."""

    def test_field_equations_vanish(self, w5):
        for x in sorted(w5.window):
            assert onshell_reduce(w5.kinetic_form(x, 0), w5).is_zero()

    def test_late_field_is_linear_extrapolation(self, w5):
        """On-shell φ(4) = 4φ(1) − 3φ(0)."""
        expected = w5.field('phi', 1, 0).scale(4) - w5.field('phi', 0, 0).scale(3)
        assert onshell_reduce(w5.field('phi', 4, 0), w5) == expected

    def test_early_fields_untouched(self, w5):
        F = pointwise_product(w5.field('phi', 0, 0), w5.field('phi', 1, 0))
        assert onshell_reduce(F, w5) == F


@pytest.mark.integration
class TestQuantumMasterEquation:
    """Residuals, ŝ and the retarded map at orders (2, 2)."""

    def test_cubic_interaction_solves_qme(self, cubic, orders, w5):
        assert qme_residual(cubic, w5, orders).is_zero()

    def test_koszul_form_equals_bracket_form(self, orders, w5):
        """(ℏ/i)e^{−iV/ℏ}·_T{e^{iV/ℏ},S₀}_⋆ = ½{S₀+V,S₀+V}_T − iℏ△(S₀+V)."""
        V = vector_field_cubic(w5, 2)
        assert qme_residual(V, w5, orders) == qme_bracket_form(V, w5, orders)

    def test_vector_field_term_breaks_qme(self, orders, w5):
        V = vector_field_cubic(w5, 2)
        assert not qme_residual(V, w5, orders).is_zero()

    @pytest.mark.slow
    def test_koszul_form_equals_bracket_form_at_third_order(self, w7):
        """Orders (3, 3) on the seven-site chain, vector-field term included."""
        orders = PerturbativeOrders(3, 3)
        V = vector_field_cubic(w7, 3, order=3)
        assert qme_residual(V, w7, orders) == qme_bracket_form(V, w7, orders)

    def test_odd_interaction_rejected(self, orders, w5):
        odd = Functional.from_product([w5.gen('phi*', 2), w5.gen('phi', 2), w5.gen('phi', 2)], 2, '1/2')
        with pytest.raises(GradingError):
            qme_residual(odd, w5, orders)
        with pytest.raises(GradingError):
            qbv_hat(w5.field('phi*', 2, 2), odd, w5, orders)

    def test_quantum_bv_operator_is_nilpotent(self, cubic, orders, w5):
        """ŝ² = 0 on interior functionals when the QME holds."""
        for X in (w5.field('phi*', 2, 2), Functional.from_product([w5.gen('phi*', 2), w5.gen('phi', 2)], 2)):
            assert qbv_hat(qbv_hat(X, cubic, w5, orders), cubic, w5, orders).is_zero()

    def test_retarded_map_intertwines(self, cubic, orders, w5):
        """R_V(ŝX) = {R_V(X), S₀}_⋆."""
        S = w5.S0(2)
        X = Functional.from_product([w5.gen('phi*', 2), w5.gen('phi', 2)], 2)
        lhs = retarded_map(cubic, qbv_hat(X, cubic, w5, orders), w5, orders)
        rhs = retarded_map(cubic, X, w5, orders).map(lambda F: antibracket(F, S, w5, 'star'))
        assert lhs == rhs

    def test_free_limit_of_quantum_bv_operator(self, cubic, orders, w5):
        """At λ⁰, ŝX = {X,S₀}_⋆."""
        X = w5.field('phi*', 2, 2)
        assert qbv_hat(X, cubic, w5, orders)[0] == antibracket(X, w5.S0(2), w5, 'star')

    def test_unknown_variants(self, cubic, orders, w5):
        with pytest.raises(PreconditionError):
            qme_residual(cubic, w5, orders, variant='sideways')
        with pytest.raises(PreconditionError):
            qme_residual(cubic, w5, orders, variant='regularized')
        with pytest.raises(PreconditionError):
            qbv_hat(w5.field('phi*', 2, 2), cubic, w5, orders, variant='with_theta')


@pytest.mark.integration
class TestScaleRegularization:
    """The family h_Λ = H + iΛ/(Λ+1)·Δ_D and its products."""

    def test_family_approaches_feynman_propagator(self, w5):
        """h_Λ − H_F = −iΔ_D/(Λ+1)."""
        family = ScaleFamily(w5)
        assert family.h(9) - w5.H_F == -I * w5.delta_d / 10

    def test_negative_scale_rejected(self, w5):
        with pytest.raises(PreconditionError):
            ScaleFamily(w5).h(-1)

    def test_asymmetric_rule_rejected(self, w5):
        family = ScaleFamily(w5, rule=lambda scale: w5.delta)
        with pytest.raises(PreconditionError):
            family.h(1)

    def test_zero_scale_is_identity(self, w5, rng):
        family = ScaleFamily(w5)
        F = random_functional(w5, rng, 2)
        assert family.t_lambda(F, 0) == F
        assert transported_scale_bracket(F, F, ScaleMode(family, Rational(0))).is_zero()

    @pytest.mark.parametrize("scale", [0, 1, 10])
    def test_three_term_form_equals_bracket_form(self, scale, orders, w5):
        mode = ScaleMode(ScaleFamily(w5), Rational(scale))
        V = vector_field_cubic(w5, 2)
        three_term = qme_residual(V, w5, orders, variant='regularized', scale=mode)
        assert three_term == regularized_qme_bracket_form(V, w5, orders, mode)

    @pytest.mark.slow
    def test_three_term_form_at_third_order(self, w7):
        orders = PerturbativeOrders(3, 3)
        mode = ScaleMode(ScaleFamily(w7), Rational(1))
        V = vector_field_cubic(w7, 3, order=3)
        three_term = qme_residual(V, w7, orders, variant='regularized', scale=mode)
        assert three_term == regularized_qme_bracket_form(V, w7, orders, mode)

    @pytest.mark.parametrize("scale", [1, 10])
    def test_scale_time_ordering_intertwines(self, scale, w5):
        family = ScaleFamily(w5)
        rng = random.Random(scale)
        for _ in range(5):
            F, G = random_functional(w5, rng, 2), random_functional(w5, rng, 2)
            lhs = family.t_lambda(pointwise_product(F, G), scale)
            rhs = family.tprod_lambda(family.t_lambda(F, scale), family.t_lambda(G, scale), scale)
            assert lhs == rhs

    def test_inverse_scale_ordering(self, w5, rng):
        family = ScaleFamily(w5)
        F = random_functional(w5, rng, 2)
        assert family.t_lambda(family.t_lambda(F, 1), 1, 'inverse') == F


@pytest.mark.integration
class TestTrivialPair:
    """θ₀ and the gauge-fixing fermion on the decoupled ghost sector."""

    def test_theta_precondition_holds(self, trivial_pair):
        check_theta_precondition(theta0(trivial_pair, 2), trivial_pair)

    def test_theta_precondition_detects_coupling(self, trivial_pair):
        bad = Functional.from_product([trivial_pair.gen('phi*', 2), trivial_pair.gen('phi', 2)], 2)
        with pytest.raises(PreconditionError):
            check_theta_precondition(bad, trivial_pair)

    def test_theta_identity(self, trivial_pair, orders):
        """{e_T^{iV/ℏ}·_T X, θ₀}_T = {e_T^{iV/ℏ}·_T X, θ₀}_⋆."""
        g = trivial_pair.gen('phi', 2)
        V = Functional.from_product([g, g, g], 2, '1/6')
        X = trivial_pair.field('phi*', 2, 2)
        assert theta_identity_check(V, X, theta0(trivial_pair, 2), trivial_pair, orders).holds

    def test_gauge_fermion_must_be_odd_without_antifields(self, trivial_pair):
        X = trivial_pair.field('phi', 2, 2)
        with pytest.raises(GradingError):
            gauge_fermion_auto(trivial_pair.field('cbar*', 2, 2), X, trivial_pair)
        with pytest.raises(GradingError):
            gauge_fermion_auto(trivial_pair.field('c', 2, 2), X, trivial_pair)

    def test_gauge_fermion_fixes_antifield_free_functionals(self, trivial_pair):
        psi = Functional.from_product([trivial_pair.gen('cbar', 2), trivial_pair.gen('phi', 2)], 2)
        X = trivial_pair.field('phi', 3, 2)
        assert gauge_fermion_auto(psi, X, trivial_pair) == X

    def test_gauge_independence(self, trivial_pair, orders):
        g = trivial_pair.gen('phi', 2)
        V = Functional.from_product([g, g, g], 2, '1/6')
        psi = Functional.from_product([trivial_pair.gen('cbar', 2), g, g], 2)
        result = gauge_independence_check(V, psi, trivial_pair, orders)
        assert result.qme_covariant
        assert result.qme_holds
        assert result.smatrix_independent is True
        assert not result.notes

    def test_onshell_smatrix_independent_of_gauge_fermion(self, trivial_pair, orders):
        """Two gauge fermions give the same on-shell S-matrix, each satisfying the on-shell condition."""
        g = trivial_pair.gen('phi', 2)
        V = Functional.from_product([g, g, g], 2, '1/6')
        fermions = [
            Functional.from_product([trivial_pair.gen('cbar', 2), g, g], 2),
            Functional.from_product([trivial_pair.gen('cbar', 1), trivial_pair.gen('phi', 1)], 2, 3)
            + Functional.from_product([trivial_pair.gen('cbar', 3), g, trivial_pair.gen('phi', 3)], 2, '-1/2'),
        ]
        smatrices = []
        for psi in fermions:
            result = gauge_independence_check(V, psi, trivial_pair, orders)
            assert result.qme_covariant
            assert result.smatrix_independent is True
            gauge_fixed = gauge_fermion_auto(psi, V, trivial_pair)
            smatrix = time_ordered_exponential(gauge_fixed, trivial_pair, orders)
            smatrices.append(smatrix.map(lambda F: onshell_reduce(F, trivial_pair)))
        assert smatrices[0] == smatrices[1]
