"""Sparse continual learning with full experience replay on a small autodiff core."""

__version__ = "0.1.0"
