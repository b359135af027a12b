"""Bayesian, Gaussian-process and variational LSTM / Transformer language models."""

__version__ = "0.1.0"
