"""
Unit tests for the bvlattice identity engine.
"""
