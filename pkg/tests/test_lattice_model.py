"""
Tests for lattice models, propagators and generalized Lagrangians.
"""
import random

import pytest
from sympy import ImmutableMatrix, Rational

from bvlattice.errors import (
    GreenIdentityError,
    LagrangianAxiomError,
    ModelValidationError,
    RetardedSupportError,
    SymmetryError,
)
from bvlattice.graded_core import Functional, Generator
from bvlattice.lattice_model import (
    Lagrangian,
    ModelSpec,
    build_model,
    cutoff_indicator,
    free_lagrangian,
    lagrangian_apply,
    lagrangian_equiv,
    product_lagrangian,
    random_functional,
    supp_df,
    validate_lagrangian,
    wave_chain_spec,
)


@pytest.mark.unit
class TestWaveChain:
    """Propagators of the bundled wave chains."""

    def test_retarded_propagator_is_time_difference(self, w5):
        """Δ_R(t,s) = t − s for t > s and zero otherwise."""
        for t in w5.sites:
            for s in w5.sites:
                assert w5.delta_r[t, s] == (t - s if t > s else 0)

    def test_commutator_and_dirac_functions(self, w5):
        """Δ(1,3) = −2 and Δ_D(1,3) = 1."""
        assert w5.delta[1, 3] == -2
        assert w5.delta_d[1, 3] == 1
        assert w5.delta_d[2, 2] == 0

    def test_symmetries(self, w7):
        """Δ is antisymmetric; Δ_D and H are symmetric."""
        assert w7.delta == -w7.delta.T
        assert w7.delta_d == w7.delta_d.T
        assert w7.H == w7.H.T

    def test_window_green_identities(self, w7):
        """Δ_D·K = 1 and Δ·K = 0 on window columns."""
        dd_k, d_k = w7.delta_d * w7.K, w7.delta * w7.K
        for z in w7.window:
            for x in w7.sites:
                assert dd_k[x, z] == (1 if x == z else 0)
                assert d_k[x, z] == 0

    def test_h_defaults_to_zero(self, w5):
        """Without H the Hadamard part vanishes and H_F = iΔ_D."""
        assert all(v == 0 for v in w5.H)

    def test_neighbourhoods(self, w5):
        """K couples nearest neighbours only."""
        assert w5.neighbors(2) == frozenset({1, 3})
        assert w5.closed_neighborhood([1]) == frozenset({0, 1, 2})

    def test_kinetic_form(self, w5):
        """(Kφ)(2) = φ(1) − 2φ(2) + φ(3)."""
        expected = w5.field('phi', 1, 0) + w5.field('phi', 3, 0) - w5.field('phi', 2, 0).scale(2)
        assert w5.kinetic_form(2, 0) == expected


@pytest.mark.unit
class TestModelValidation:
    """Invalid model descriptions are rejected with the failing invariant."""

    def test_asymmetric_k(self):
        """An asymmetric K is a symmetry violation."""
        spec = wave_chain_spec(3)
        K = spec.K.as_mutable()
        K[0, 1] = 2
        with pytest.raises(SymmetryError):
            build_model(ModelSpec(3, (1,), ImmutableMatrix(K), spec.species))

    def test_window_on_last_site(self):
        """A window reaching the final site has no forward solution."""
        spec = wave_chain_spec(4)
        with pytest.raises(RetardedSupportError):
            build_model(ModelSpec(4, (0, 1, 2, 3), spec.K, spec.species))

    def test_bad_time_order(self):
        """The time order must be a permutation of the sites."""
        spec = wave_chain_spec(3)
        with pytest.raises(ModelValidationError):
            build_model(ModelSpec(3, (1,), spec.K, spec.species, time_order=(0, 0, 1)))

    def test_wrong_retarded_propagator(self):
        """A supplied Δ_R that does not invert K on the window is rejected."""
        spec = wave_chain_spec(3)
        with pytest.raises(GreenIdentityError):
            build_model(ModelSpec(3, (1,), spec.K, spec.species, delta_r=ImmutableMatrix.zeros(3, 3)))


@pytest.mark.unit
class TestTestVectors:
    """Cutoffs and the lattice support of df."""

    def test_supp_df_of_plateau(self, w5):
        """A plateau on {1,2,3} varies at its edges."""
        f = cutoff_indicator(w5, [1, 2, 3])
        assert supp_df(w5, f) == frozenset({0, 1, 3, 4})

    def test_constant_vector_has_no_boundary(self, w5):
        """Constant f has empty supp df."""
        assert supp_df(w5, tuple(Rational(2) for _ in w5.sites)) == frozenset()

    def test_random_functional_respects_sites(self, w7):
        """Random functionals live on the requested sites and truncation."""
        F = random_functional(w7, random.Random(3), 2, sites=[2, 3], max_antifields=1)
        assert F.support() <= frozenset({2, 3})
        assert F.order == 2


class TestLagrangians:
    """Support, additivity and equivalence of generalized Lagrangians."""

    def test_free_lagrangian_on_unit_cutoff(self, w5):
        """L₀ on f ≡ 1 is the free action."""
        L0 = free_lagrangian(w5, 1)
        assert L0(tuple(Rational(1) for _ in w5.sites)) == w5.S0(1)
        assert lagrangian_apply(L0, tuple(Rational(1) for _ in w5.sites)) == w5.S0(1)

    def test_free_lagrangian_axioms(self, w7):
        """L₀ is additive and supported on the stencil of f."""
        L0 = free_lagrangian(w7, 0)
        assert validate_lagrangian(L0, w7, samples=5, seed=2) is L0

    def test_nonvanishing_lagrangian_rejected(self, w5):
        """A Lagrangian ignoring f fails L(0) = 0."""
        phi = w5.field('phi', 2, 0)
        L = Lagrangian(lambda f: phi, 1, 'constant')
        with pytest.raises(LagrangianAxiomError):
            validate_lagrangian(L, w5, samples=10, seed=0)

    def test_product_lagrangian_has_arity_two(self, w5):
        """L₀(f)·L₀(g) is additive in each argument."""
        L0 = free_lagrangian(w5, 0)
        L2 = product_lagrangian(L0, L0)
        assert L2.arity == 2
        validate_lagrangian(L2, w5, samples=3, seed=1)

    def test_arity_enforced(self, w5):
        """Calling with the wrong number of test vectors raises."""
        with pytest.raises(LagrangianAxiomError):
            free_lagrangian(w5, 0)()

    def test_equivalence(self, w5):
        """L₀ ~ L₀, but L₀ and 2·L₀ differ in the bulk."""
        L0 = free_lagrangian(w5, 0)
        assert lagrangian_equiv(L0, L0, w5).equivalent
        doubled = Lagrangian(lambda f: L0(f).scale(2), 1, 'L0x2')
        verdict = lagrangian_equiv(L0, doubled, w5)
        assert not verdict.equivalent
        assert verdict.offending_sites

    def test_boundary_term_is_equivalent(self, w5):
        """Adding a term supported on supp df keeps the class."""
        L0 = free_lagrangian(w5, 0)
        g = Generator(w5.primary, 0)

        def with_boundary(f):
            jump = f[1] - f[0]
            return L0(f) + Functional.generator(g, 0, jump)

        assert lagrangian_equiv(L0, Lagrangian(with_boundary, 1, 'L0+b'), w5).equivalent
