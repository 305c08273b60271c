"""Exception hierarchy shared by every fblab module."""

from __future__ import annotations


class FblabError(Exception):
    """Base class for all library errors."""


class ValidationError(FblabError):
    """Malformed input: bad grid, bad config field, bad parameter."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DomainError(ValidationError):
    """A region (ball, patch, radius) does not fit the grid."""


class SignError(ValidationError):
    """A u-role field has genuinely negative values."""


class NonFiniteError(ValidationError):
    """NaN or infinity at some node."""


class PreconditionError(FblabError):
    """A named hypothesis of an operation fails on the given data."""

    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"{name}: {detail}" if detail else name)
        self.name = name
        self.detail = detail


class NotApplicable(PreconditionError):
    """The operation's gate is closed (e.g. gradient average below M)."""


class ConvergenceError(FblabError):
    """An iterative solver exhausted its iteration cap."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class ClaimFailure(FblabError):
    """A verified claim (acceptance-style check) did not hold."""
