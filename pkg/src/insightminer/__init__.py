"""Automated insight discovery over tabular data via single-player tree search."""

__version__ = "0.1.0"
