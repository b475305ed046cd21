"""Maximally predictable portfolios: optimizers, forecasters and a walk-forward backtester."""

__version__ = "0.1.0"
