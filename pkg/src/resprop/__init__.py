"""Residual propagation and node-level graph neural tangent kernels."""

__version__ = "0.1.0"
