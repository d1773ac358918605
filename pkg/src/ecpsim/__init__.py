"""Rigid-body contact dynamics with equivalent contact points."""

from ._core import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
