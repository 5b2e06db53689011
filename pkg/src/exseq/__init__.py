"""Discrete de Rham complexes and commuting projection-based interpolation
on reference simplices, with verification and p-convergence studies."""

__version__ = "0.1.0"
