"""Tracking-by-clustering toolkit for multi-object video sequences."""

__version__ = "0.1.0"
