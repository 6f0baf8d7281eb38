"""Exception hierarchy shared by all romcex modules.

Numerical failures (convergence, conditioning, PSD violations) derive from
:class:`NumericalError` so callers such as the CLI can map them to one exit
code.
"""


class RomcexError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RomcexError, ValueError):
    """An argument lies outside the domain of the operation (shape, index, range)."""


class ValidationError(RomcexError, ValueError):
    """A configuration document failed validation.

    ``path`` names the offending field (e.g. ``"rom.rank"``).
    """

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalError(RomcexError, ArithmeticError):
    """Base class for failures of a numerical algorithm."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")


class ConditioningError(NumericalError):
    pass


class DegeneracyError(NumericalError):
    pass


class NotPSDError(NumericalError):
    pass


class WellPosednessError(NumericalError):
    pass


class CoercivityError(NumericalError):
    def __init__(self, message, mu=None):
        self.mu = mu
        super().__init__(message)


class SupportError(NumericalError):
    pass


class SizeError(RomcexError, ValueError):
    pass
