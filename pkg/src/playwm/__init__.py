"""Desk-scale play-data world-model pipeline."""

__version__ = "0.1.0"
