"""Yarn-level rod mechanics, RVE homogenisation and a GPR surrogate for knitted membranes."""

__version__ = "0.1.0"
