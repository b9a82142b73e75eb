"""Multiplicative iterative solver for Fredholm equations of the first kind."""

__version__ = "0.1.0"
