"""Federated-learning simulator with learned per-round aggregation weights."""

__version__ = "0.1.0"
