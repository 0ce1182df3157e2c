"""Decomposition heuristic for static traffic assignment."""
__version__ = "0.1.0"
