"""Numerical laboratory for mean-field jump processes on finite state spaces."""

__version__ = "0.1.0"
