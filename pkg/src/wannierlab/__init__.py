"""Wannier bases, spectral projections and invariants for crystals whose
symmetry group is a finitely generated discrete group."""
__version__ = "0.1.0"
