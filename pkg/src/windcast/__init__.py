"""Hybrid wind speed forecaster: ensemble decomposition plus per-mode transformers."""

__version__ = "0.1.0"
