"""Entropy-gated branching for step-wise test-time search."""

__version__ = "0.1.0"
