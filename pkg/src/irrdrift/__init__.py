"""Diffusions with distributional drift ``b'`` for a continuous, possibly fractal ``b``."""

__version__ = "0.1.0"
