"""Spectral partitioning of sparse (1,2)-symmetric 3-tensors."""

__version__ = "0.1.0"
