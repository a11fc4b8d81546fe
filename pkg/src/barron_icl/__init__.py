"""Transformers that run in-context Lasso over universal ramp features."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
