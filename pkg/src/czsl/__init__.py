"""Continual zero-shot learning with experience replay on precomputed features."""

__version__ = "0.1.0"
