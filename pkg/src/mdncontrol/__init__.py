"""Probabilistic control of stochastic plants with mixture density networks."""

__version__ = "0.1.0"
