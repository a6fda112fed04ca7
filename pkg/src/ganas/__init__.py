"""Genetic-algorithm search over variable-length CNN architectures."""

__version__ = "0.1.0"
