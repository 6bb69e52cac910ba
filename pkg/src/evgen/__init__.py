"""Generative models of EV charging load curves and tools to compare them with real data."""

__version__ = "0.1.0"
