"""Numerical laboratory for boundary observability and inverse coefficient
problems on the unit interval and the unit square."""

__version__ = "0.1.0"
