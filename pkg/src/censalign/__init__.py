"""Clustering interval-censored time-series with per-series delayed-entry alignment."""

__version__ = "0.1.0"
