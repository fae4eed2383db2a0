"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
Usage problems are handled by the argument parser itself (exit 1).
"""


class EvpipeError(Exception):
    """Base class for all package errors."""


class DataError(EvpipeError):
    """Malformed or inconsistent input data (files, streams, configs)."""


class ParseError(DataError):
    """Text or binary input that cannot be decoded. Carries a location."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(EvpipeError):
    """Numerical failure at runtime (divergence, non-finite values)."""
