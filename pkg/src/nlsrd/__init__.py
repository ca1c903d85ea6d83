"""Stochastic nonlocal reaction-diffusion: noise approximations, solvers and attractors."""

__version__ = "0.1.0"
