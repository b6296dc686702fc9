"""Federated averaging over clients holding variable-length sequences."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
