"""Random attractors of a stochastic reaction-diffusion equation on a truncated line."""

__version__ = "0.1.0"
