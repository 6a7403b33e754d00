"""
Tests for exact scalars, ℏ-series and graded functionals.
"""
import pytest
from hypothesis import given, settings

from bvlattice.errors import (
    GradingError,
    NegativeHbarPowerError,
    TruncationMismatchError,
    UnassignedGeneratorError,
)
from bvlattice.graded_core import (
    I_UNIT,
    Functional,
    Generator,
    HbarSeries,
    Monomial,
    Species,
    mono_mul,
    pointwise_product,
    pure_ghost_number,
    scalar,
    support_of,
)
from bvlattice.lattice_model import wave_chain
from bvlattice.bv_core import trivial_pair_model
from tests.conftest import functionals, homogeneous

W5 = wave_chain(5)
TP = trivial_pair_model(5)


def series(*values):
    return HbarSeries(tuple(scalar(v) for v in values))


class TestScalars:
    """Gaussian rationals are exact."""

    def test_string_and_int_coercion(self):
        """'p/q' strings, ints and 'i' all coerce exactly."""
        assert scalar('1/3') * 3 == scalar(1)
        assert scalar('i') == I_UNIT
        assert scalar('2*i') * scalar('-i/2') == scalar(1)

    def test_booleans_rejected(self):
        """Booleans are not numbers here."""
        with pytest.raises(TypeError):
            scalar(True)


@pytest.mark.unit
class TestHbarSeries:
    """Truncated power series in ℏ."""

    def test_product_truncates(self):
        """(1 + ℏ)² = 1 + 2ℏ at order 1."""
        a = series(1, 1)
        assert a * a == series(1, 2)

    def test_exp_of_hbar(self):
        """exp(ℏ) = 1 + ℏ + ℏ²/2 at order 2."""
        assert series(0, 1, 0).exp() == series(1, 1, '1/2')

    def test_inverse(self):
        """(1 − ℏ)⁻¹ = 1 + ℏ + ℏ² + ℏ³."""
        assert series(1, -1, 0, 0).inverse() == series(1, 1, 1, 1)

    def test_shift_and_unshift(self):
        """Multiplying by ℏ then dividing returns the series when nothing is truncated."""
        a = series(2, 3, 0)
        assert a.shift(1) == series(0, 2, 3)
        assert a.shift(1).unshift(1) == a

    def test_unshift_negative_power_raises(self):
        """Dividing a nonzero ℏ⁰ part by ℏ is an error."""
        with pytest.raises(NegativeHbarPowerError):
            series(1, 0).unshift(1)

    def test_mismatched_truncation_raises(self):
        """Series at different orders do not combine."""
        with pytest.raises(TruncationMismatchError):
            series(1, 0) + series(1, 0, 0)

    def test_monomial_beyond_truncation_vanishes(self):
        """ℏ³ at order 2 is zero."""
        assert HbarSeries.monomial(5, 3, 2).is_zero()


@pytest.mark.unit
class TestMonomials:
    """Canonical ordering and Koszul signs."""

    def test_odd_transposition_sign(self):
        """φ*(1)·φ*(2) = −φ*(2)·φ*(1)."""
        a = Monomial(((W5.gen('phi*', 1), 1),))
        b = Monomial(((W5.gen('phi*', 2), 1),))
        assert mono_mul(a, b)[0] == 1
        assert mono_mul(b, a)[0] == -1

    def test_odd_square_vanishes(self):
        """An odd generator squares to zero."""
        a = Monomial(((W5.gen('phi*', 1), 1),))
        assert mono_mul(a, a) == (0, None)

    def test_even_powers_accumulate(self):
        """φ(2)·φ(2)² = φ(2)³."""
        g = W5.gen('phi', 2)
        F = Functional.from_product([g, g, g], 0)
        assert str(next(iter(F.terms))) == 'phi(2)^3'

    def test_antifield_gradings(self):
        """φ* is odd with ghost number −1 and antifield number 1."""
        anti = W5.species('phi*')
        assert anti.odd and anti.ghost_number == -1 and anti.antifield_number == 1
        assert anti.partner.name == 'phi'

    def test_pure_ghost_number(self):
        """Only ghost fields carry pure ghost number; antifields carry none."""
        assert pure_ghost_number(TP.species('c')) == 1
        assert pure_ghost_number(TP.species('cbar')) == 0
        assert pure_ghost_number(TP.species('c*')) == 0

    def test_invalid_parity_rejected(self):
        """Parity is 0 or 1."""
        with pytest.raises(GradingError):
            Species('x', 2)


@pytest.mark.unit
class TestFunctionals:
    """Arithmetic, derivatives, gradings and evaluation."""

    def test_zero_terms_dropped(self):
        """F − F has no terms."""
        F = W5.field('phi', 1, 1)
        assert (F - F).is_zero()
        assert not (F - F).terms

    def test_left_derivative_sign(self):
        """∂_{φ*(2)} of φ*(1)φ*(2) is −φ*(1)."""
        a, b = W5.gen('phi*', 1), W5.gen('phi*', 2)
        F = Functional.from_product([a, b], 0)
        assert F.derivative(b) == -Functional.generator(a, 0)

    def test_even_derivative_counts_multiplicity(self):
        """∂_φ φ³/6 = φ²/2."""
        g = W5.gen('phi', 2)
        F = Functional.from_product([g, g, g], 1, '1/6')
        assert F.derivative(g) == Functional.from_product([g, g], 1, '1/2')

    def test_parity_of_mixed_functional_raises(self):
        """Mixed parity has no single parity."""
        F = W5.field('phi', 1, 0) + W5.field('phi*', 1, 0)
        assert not F.is_homogeneous()
        with pytest.raises(GradingError):
            F.parity()

    def test_support_and_restrict(self):
        """Restriction keeps only monomials inside the given sites."""
        F = W5.field('phi', 1, 0) + pointwise_product(W5.field('phi', 2, 0), W5.field('phi', 3, 0))
        assert F.support() == frozenset({1, 2, 3})
        assert support_of(F) == F.support()
        assert F.restrict({1, 2}) == W5.field('phi', 1, 0)

    def test_hbar_coefficient(self):
        """The ℏ¹ part of (1 + 2ℏ)φ(1) is 2φ(1)."""
        F = W5.field('phi', 1, 2).scale(series(1, 2, 0))
        assert F.hbar_coefficient(1) == W5.field('phi', 1, 2).scale(2)
        assert F.leading_hbar_order() == 0

    def test_evaluate(self):
        """Odd monomials evaluate to zero; unassigned even generators raise."""
        g = W5.gen('phi', 1)
        F = Functional.from_product([g, g], 0, 3) + W5.field('phi*', 1, 0)
        assert F.evaluate({g: 2}) == series(12)
        with pytest.raises(UnassignedGeneratorError):
            Functional.generator(g, 0).evaluate({})

    def test_conjugate(self):
        """Conjugation flips i."""
        F = W5.field('phi', 1, 0).scale(I_UNIT)
        assert F.conjugate() == -F

    def test_pretty(self):
        """Pretty printing shows coefficients and monomials."""
        g = W5.gen('phi', 2)
        assert Functional.from_product([g, g], 0, '1/2').pretty() == '(1/2)*phi(2)^2'
        assert Functional.zero(0).pretty() == '0'


@pytest.mark.property
class TestGradedAlgebraProperties:
    """Random-sample checks of the graded commutative algebra."""

    @settings(max_examples=40, deadline=None)
    @given(homogeneous(TP, max_antifields=2), homogeneous(TP, max_antifields=2))
    def test_graded_commutativity(self, F, G):
        """F·G = (−1)^{|F||G|} G·F."""
        sign = -1 if F.parity() and G.parity() else 1
        assert pointwise_product(F, G) == pointwise_product(G, F).scale(sign)

    @settings(max_examples=30, deadline=None)
    @given(functionals(TP), functionals(TP), functionals(TP))
    def test_associativity(self, F, G, H):
        """(F·G)·H = F·(G·H)."""
        assert pointwise_product(pointwise_product(F, G), H) == pointwise_product(F, pointwise_product(G, H))

    @settings(max_examples=40, deadline=None)
    @given(homogeneous(TP, max_antifields=2), homogeneous(TP, max_antifields=2))
    def test_leibniz(self, F, G):
        """∂_g(F·G) = ∂_gF·G + (−1)^{|g||F|} F·∂_gG."""
        for g in sorted(F.generators() | G.generators(), key=lambda h: h.key):
            sign = -1 if g.odd and F.parity() else 1
            expected = pointwise_product(F.derivative(g), G) + pointwise_product(F, G.derivative(g)).scale(sign)
            assert pointwise_product(F, G).derivative(g) == expected

    @settings(max_examples=40, deadline=None)
    @given(functionals(TP, max_antifields=2))
    def test_derivatives_graded_commute(self, F):
        """∂_g∂_h = (−1)^{|g||h|} ∂_h∂_g."""
        gens = sorted(F.generators(), key=lambda h: h.key)
        for g in gens:
            for h in gens:
                sign = -1 if g.odd and h.odd else 1
                assert F.derivative(h).derivative(g) == F.derivative(g).derivative(h).scale(sign)

    @settings(max_examples=30, deadline=None)
    @given(functionals(TP), functionals(TP))
    def test_evaluation_is_multiplicative(self, F, G):
        """Evaluation respects sums and products."""
        config = {Generator(sp, s): s + 1 for sp in TP.field_species + TP.antifield_species
                  if not sp.odd for s in TP.sites}
        assert (F + G).evaluate(config) == F.evaluate(config) + G.evaluate(config)
        assert pointwise_product(F, G).evaluate(config) == F.evaluate(config) * G.evaluate(config)
