"""Probabilistic lead-time regression."""

__version__ = "0.1.0"
