"""Simulation of limit order book models with volume-driven price jumps."""

__version__ = "0.1.0"
