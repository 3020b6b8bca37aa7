"""Finite truncations of the unitriangular group with Gaussian measures:
exact matrix algebra, certified series, symbolic commutators and numeric checks."""

__version__ = "0.1.0"
