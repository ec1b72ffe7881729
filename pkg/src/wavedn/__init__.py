"""Numerical laboratory for recovering first and zeroth order time-dependent
coefficients of a wave equation from boundary response operators."""
from ._accel import backend

__version__ = "0.1.0"
