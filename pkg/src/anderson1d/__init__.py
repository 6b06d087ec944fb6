"""Phase-diffusion laboratory for the 1-D Schrodinger operator with white-noise potential."""

__version__ = "0.1.0"
