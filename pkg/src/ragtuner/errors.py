"""Exception hierarchy shared across the package.

``InputError`` and its subclasses mean the caller handed us something bad
(exit code 1 at the CLI); ``NumericError`` means a computation produced
non-finite values or a numeric check failed (exit code 2).
"""

from __future__ import annotations


class RagtunerError(Exception):
    """Base class for every error raised by this package."""


class InputError(RagtunerError, ValueError):
    """Invalid argument, file, or configuration supplied by the caller."""


class ShapeError(InputError):
    """Array dimensions do not conform."""


class RangeError(InputError):
    """A scalar argument is outside its legal range."""


class ConflictError(InputError):
    """An identifier is already present."""


class ParseError(InputError):
    """A file could not be parsed; message carries the line number."""


class SchemaError(InputError):
    """A record is missing a required field or violates the schema."""


class DegenerateDirectionError(InputError):
    """A direction matrix column has zero norm and cannot be normalized."""


class UndefinedSimilarityError(InputError):
    """Cosine similarity requested for a zero vector."""


class NumericError(RagtunerError, ArithmeticError):
    """A computation produced NaN/Inf or failed a numeric consistency check."""


class TransportError(RagtunerError):
    """An HTTP backend stayed unreachable or kept failing after retries."""


class GenerationError(RagtunerError):
    """The generator backend failed; carries the pipeline trace so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
