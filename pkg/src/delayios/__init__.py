"""Simulation and numerical certification of output stability for time-delay systems."""

__version__ = "0.1.0"
