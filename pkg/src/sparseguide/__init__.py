"""Desk-scale lab for sparsity-guided flow-matching token transformers."""

from .backend import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
