"""Emergent traffic norms at a grid intersection."""

__version__ = "0.1.0"
