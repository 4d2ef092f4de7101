"""Structured-sparsity training with the sparse group l0asso regularizer."""

__version__ = "0.1.0"
