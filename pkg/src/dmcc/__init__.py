"""Diffusion maximum-correntropy estimation over adaptive networks."""

__version__ = "0.1.0"
