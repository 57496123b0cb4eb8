"""Exception hierarchy shared by every crowdtrack module."""

from __future__ import annotations


class CrowdTrackError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(CrowdTrackError, ValueError):
    """A value violates a domain invariant (bad box, score out of range, ...)."""


class ParseError(CrowdTrackError, ValueError):
    """A text record could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(CrowdTrackError, ValueError):
    """A binary stream does not carry the expected header or sentinel."""


class LengthError(FormatError):
    """A binary stream ends before its declared payload."""


class NumericalError(CrowdTrackError, ArithmeticError):
    """A linear-algebra step hit a singular or non-finite quantity."""


class UsageError(CrowdTrackError, ValueError):
    """An API was called out of contract (unordered frames, missing inputs, ...)."""
