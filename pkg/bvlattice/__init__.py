"""Exact BV formalism and renormalized time ordering on finite lattice models."""
from bvlattice.errors import BVLatticeError
from bvlattice.graded_core import Functional, Generator, HbarSeries, Monomial, Species
from bvlattice.lattice_model import Model, ModelSpec, build_model, wave_chain
from bvlattice.products import CouplingSeries, PerturbativeOrders

__version__ = '0.1.0'

__all__ = [
    'BVLatticeError',
    'CouplingSeries',
    'Functional',
    'Generator',
    'HbarSeries',
    'Model',
    'ModelSpec',
    'Monomial',
    'PerturbativeOrders',
    'Species',
    'build_model',
    'wave_chain',
]
