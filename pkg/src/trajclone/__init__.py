"""Desk-scale imitation-learning driving laboratory."""

__version__ = "0.1.0"
