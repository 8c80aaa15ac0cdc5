"""Prediction intervals for feedforward ReLU networks."""

__version__ = "0.1.0"
