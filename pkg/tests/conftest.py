"""
Pytest configuration and shared fixtures for the lattice BV tests.
"""
import os
import random
import shutil
import tempfile
from pathlib import Path

import pytest
from hypothesis import strategies as st

from bvlattice.bv_core import trivial_pair_model
from bvlattice.cli import load_model
from bvlattice.graded_core import Functional
from bvlattice.lattice_model import random_functional, wave_chain
from bvlattice.products import PerturbativeOrders

FIXTURE_DIR = Path(__file__).parent.parent / "bvlattice" / "fixtures"


@pytest.fixture(scope="session")
def w5():
    """Five-site wave chain, window {1, 2, 3}."""
    return wave_chain(5)


@pytest.fixture(scope="session")
def w7():
    """Seven-site wave chain, window {1, ..., 5}."""
    return wave_chain(7)


@pytest.fixture(scope="session")
def trivial_pair():
    """Wave chain carrying the decoupled ghost sector (b, c, c̄)."""
    return trivial_pair_model(5)


@pytest.fixture
def orders():
    return PerturbativeOrders(2, 2)


@pytest.fixture
def rng():
    """A seeded generator; tests stay reproducible."""
    return random.Random(1234)


@pytest.fixture
def cubic(w5):
    """V = φ(2)³/6 on W5 at ℏ-order 2."""
    g = w5.gen('phi', 2)
    return Functional.from_product([g, g, g], 2, '1/6')


@pytest.fixture(scope="session")
def wave5_bundle():
    return load_model(str(FIXTURE_DIR / "wave5.json"))


@pytest.fixture(scope="session")
def trivial_pair_bundle():
    return load_model(str(FIXTURE_DIR / "trivial_pair.json"))


@pytest.fixture(scope="session")
def gauge_pair_bundle():
    """Two even fields a, b with one abelian gauge symmetry and Z contracting a at depth 2."""
    return load_model(str(FIXTURE_DIR / "gauge_pair.json"))


@pytest.fixture
def fixture_path():
    """Resolve a bundled fixture by file name."""
    def resolve(name):
        return str(FIXTURE_DIR / name)
    return resolve


@pytest.fixture
def temp_output_dir():
    """
    Creates a temporary directory for test outputs.
    """
    temp_dir = tempfile.mkdtemp(prefix="test_output_")
    yield temp_dir
    # Cleanup
    if os.path.exists(temp_dir):
        shutil.rmtree(temp_dir)


def functionals(model, order=2, **kwargs):
    """Hypothesis strategy: seeded random graded functionals on ``model``."""
    return st.integers(min_value=0, max_value=2 ** 32 - 1).map(
        lambda seed: random_functional(model, random.Random(seed), order, **kwargs))


def homogeneous(model, order=2, **kwargs):
    """Like :func:`functionals`, restricted to one parity."""
    def pick(args):
        seed, odd = args
        even_part, odd_part = random_functional(model, random.Random(seed), order, **kwargs).parity_parts()
        return odd_part if odd else even_part
    return st.tuples(st.integers(min_value=0, max_value=2 ** 32 - 1), st.booleans()).map(pick)
