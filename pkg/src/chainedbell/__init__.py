"""Chained Bell inequality bounds for two-qubit states and NPA randomness certification."""

__version__ = "0.1.0"
