"""Sequence-recognition toolkit with temporal super-resolution
reconstruction of sparsely sampled feature sequences."""

__version__ = "0.1.0"
