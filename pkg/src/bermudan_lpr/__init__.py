"""Bermudan option pricing by regression Monte Carlo with local polynomial estimates."""

__version__ = "0.1.0"
