"""Synthetic population generation with discrete Bayesian networks."""

__version__ = "0.1.0"
