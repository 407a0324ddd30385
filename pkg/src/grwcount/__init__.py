"""Quantitative checks of the GRW counting-anomaly argument."""

__version__ = "0.1.0"
