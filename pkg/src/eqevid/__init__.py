"""Equivariant evidential uncertainty for 3-D vector regression (atomic forces)."""
from .errors import ExpOverflow, NotPositiveDefinite, NumericalError

__version__ = "0.1.0"

__all__ = ["ExpOverflow", "NotPositiveDefinite", "NumericalError", "__version__"]
