"""Cooperative elliptic systems on planar balls and annuli: solutions, spectra, symmetry."""
__version__ = "0.1.0"
