"""Exception hierarchy shared by every engine."""

from __future__ import annotations


class StelabError(Exception):
    """Base class for all library errors."""


class DegenerateQuantizer(StelabError, ValueError):
    pass


class InvalidRange(StelabError, ValueError):
    pass


class NonFiniteInput(StelabError, ValueError):
    pass


class DimError(StelabError, ValueError):
    pass


class DivergenceError(StelabError, ArithmeticError):
    """Raised when the finite-d iterate blows up.

    ``step`` is the index of the offending update and ``partial`` carries
    whatever had been recorded up to that point (a Trajectory or None).
    """

    def __init__(self, message: str, step: int, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


class OdeDivergence(StelabError, ArithmeticError):
    def __init__(self, message: str, tau: float, partial=None):
        super().__init__(message)
        self.tau = tau
        self.partial = partial


class CflError(StelabError, ValueError):
    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class NoInteriorSolution(StelabError, ValueError):
    pass


class NoFixedPointFound(StelabError, RuntimeError):
    pass


class SchemaError(StelabError, ValueError):
    pass


class ConfigError(StelabError, ValueError):
    pass
