"""Spectra of polynomials in free semicircular and deterministic matrices."""

__version__ = "0.1.0"
