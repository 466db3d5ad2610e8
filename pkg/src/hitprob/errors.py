"""Exception hierarchy.

Validation problems (bad shapes, malformed configs) derive from
:class:`ValidationError`; failures of the numerics or of the regularity
hypotheses derive from :class:`NumericalError`.  The CLI maps the two
families to exit codes 1 and 2.
"""

from __future__ import annotations


class HitprobError(Exception):
    """Base class for all package errors."""


class ValidationError(HitprobError, ValueError):
    """Inconsistent input: dimensions, grids, config fields."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalError(HitprobError, ArithmeticError):
    """A numerical step failed or a mathematical hypothesis does not hold."""


class FactorizationError(NumericalError):
    pass


class ScoreUndefinedError(NumericalError):
    """The log-density gradient does not exist at the requested point."""


class NotABasisError(NumericalError):
    """Selected z-vectors do not form a (numerically) usable basis."""

    def __init__(self, message: str, subspace_dim: int | None = None):
        self.subspace_dim = subspace_dim
        super().__init__(message)


class NotRegularError(NumericalError):
    """Some h_k is not differentiable (gradient assembly failed)."""

    def __init__(self, message: str, failed_k: int | None = None):
        self.failed_k = failed_k
        super().__init__(message)
