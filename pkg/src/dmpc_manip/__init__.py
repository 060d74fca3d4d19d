"""Distributed MPC motion control for multiple serial manipulators."""

__version__ = "0.1.0"
