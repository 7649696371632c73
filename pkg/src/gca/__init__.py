"""Granger-causal structure alignment for cross-domain time-series forecasting."""

__version__ = "0.1.0"
