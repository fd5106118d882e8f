"""Finite-data training dynamics of Gaussian and Ising pairwise energy-based models."""

__version__ = "0.1.0"
