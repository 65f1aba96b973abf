"""Numerical laboratory for extremal eigenvalue gaps of generalized Wigner matrices."""

__version__ = "0.1.0"
