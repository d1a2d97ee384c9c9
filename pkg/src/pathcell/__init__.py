"""Recurrent-cell search toolkit for knowledge-graph embedding over paths."""

__version__ = "0.1.0"
