"""Simulator and algorithms for the hybrid (local + global) network model."""

__version__ = "0.1.0"
