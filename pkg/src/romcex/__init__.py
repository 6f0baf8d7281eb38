"""Parametric reduced-order models and their conditional-expectation view."""

__version__ = "0.1.0"

from . import cex, darcy, gpe, linalg, parametric, rom, uq  # noqa: E402,F401
from .exceptions import (  # noqa: E402,F401
    CoercivityError,
    ConditioningError,
    ConvergenceError,
    DegeneracyError,
    DomainError,
    NotPSDError,
    NumericalError,
    RomcexError,
    SizeError,
    SupportError,
    ValidationError,
    WellPosednessError,
)
