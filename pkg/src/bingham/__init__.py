"""Bingham distributions on unit quaternions, mixtures, losses, and metrics."""

__version__ = "0.1.0"
