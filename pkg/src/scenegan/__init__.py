"""Compositional generative neural feature fields on a numpy autodiff engine."""
__version__ = "0.1.0"
