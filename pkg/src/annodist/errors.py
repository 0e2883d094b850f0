"""Exception hierarchy shared across the package.

The split matters for the CLI: ``DataError`` subclasses map to exit code 2,
``NumericError`` and ``TrainingError`` to exit code 3.
"""


class AnnodistError(Exception):
    """Base class for all package errors."""


class DataError(AnnodistError):
    """Invalid or unusable input data."""


class DomainError(DataError, ValueError):
    """Argument outside a function's mathematical domain."""


class ValidityError(DataError, ValueError):
    """Moment pair violates the Beta validity conditions."""


class InsufficientDataError(DataError):
    """Too few samples, annotators, or subjects to proceed."""


class SchemaError(DataError):
    """Malformed CSV input; message carries file and line context."""


class EmptyDatasetError(DataError):
    """A join or filter produced an empty dataset."""


class NumericError(AnnodistError, ArithmeticError):
    """An iterative routine failed to converge.

    ``bracket`` holds the last (lo, hi) search interval when applicable.
    """

    def __init__(self, message: str, bracket: tuple[float, float] | None = None):
        super().__init__(message)
        self.bracket = bracket


class TrainingError(AnnodistError):
    """Model training aborted (non-finite gradients, empty split, ...)."""
