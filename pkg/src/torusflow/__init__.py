"""Numerical laboratory for fully nonlinear parabolic flows on flat complex tori."""

__version__ = "0.1.0"
