"""Simulation and verification of two-level mutation-selection models."""
__version__ = "0.1.0"
