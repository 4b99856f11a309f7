"""Acoustic LDA training-data selection.

Thin wrapper over the C++ core. Matrices come back as numpy arrays;
models and selections are opaque handles passed back into the module.
"""

from ._alda import *  # noqa: F401,F403
from ._alda import AldaError, FormatError, IoError, ValidationError

__all__ = [name for name in dir() if not name.startswith("_")]
