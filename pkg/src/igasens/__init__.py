"""Isogeometric eigenvalue problems on morphing domains with high-order shape derivatives."""

__version__ = "0.1.0"
