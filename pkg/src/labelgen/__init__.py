"""Generative image-to-label classification on a from-scratch autodiff core."""

__version__ = "0.1.0"
