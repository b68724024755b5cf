"""Differentiable numerics toolkit and desk-scale generative experiments."""

__version__ = "0.1.0"
