"""Travelling fronts of a delayed reaction-diffusion equation."""
__version__ = "0.1.0"
