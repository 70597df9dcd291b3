"""Finite-difference laboratory for Ricci-flow uniqueness identities and energies."""

__version__ = "0.1.0"
