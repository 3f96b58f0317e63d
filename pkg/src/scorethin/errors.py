"""Exception types raised across the package."""

import numpy as np


class ScoreThinError(Exception):
    """Base class for all package errors."""


class DomainError(ScoreThinError, ValueError):
    """A non-finite value appeared in data or an intermediate quantity.

    ``row`` holds the offending observation index when one can be named.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class PreconditionError(ScoreThinError, ValueError):
    """Inputs violate an operation's stated precondition."""


class DegenerateError(ScoreThinError, ValueError):
    """A variance or denominator collapsed to (near) zero."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConditioningError(ScoreThinError, np.linalg.LinAlgError):
    """A matrix needed for a solve or factorization is singular."""


class DivergenceError(ScoreThinError, ArithmeticError):
    """An optimizer produced a non-finite or unbounded objective."""


class MatrixValidityError(ScoreThinError, ValueError):
    """A variance matrix is materially indefinite."""


class ConfigError(ScoreThinError, ValueError):
    """A run configuration is invalid."""
