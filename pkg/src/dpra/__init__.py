"""Guided dynamic probabilistic risk assessment."""

__version__ = "0.1.0"
