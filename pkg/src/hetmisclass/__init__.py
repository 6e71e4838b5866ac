"""Bayesian models for misclassification matrices that vary across countries."""

__version__ = "0.1.0"
