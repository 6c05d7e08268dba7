"""Monotone skew-product semiflows for Carathéodory ODEs and constant-delay DDEs."""

__version__ = "0.1.0"
