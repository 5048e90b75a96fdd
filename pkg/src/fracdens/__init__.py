"""Simulation and kernel density estimation for fBm-driven SDEs."""

__version__ = "0.1.0"
