"""Diffusion-approximation and simulation models of a router queue under AQM."""

__version__ = "0.1.0"
