"""Asymmetric eigen-methods for sparse low-rank matrix completion."""

__version__ = "0.1.0"
