"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError (and subclasses) -> 2, NumericalError -> 3.
"""


class QhSpotError(Exception):
    """Base class for all package errors."""


class ConfigError(QhSpotError):
    """Invalid or inconsistent run configuration."""


class DataError(QhSpotError):
    """Problems with input data (parsing, schema, integrity, coverage)."""


class ParseError(DataError):
    """Malformed input record; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    """Input violates the declared schema (wrong series, unit, columns)."""


class IntegrityError(DataError):
    """Duplicate or contradictory observations in the input."""


class NumericalError(QhSpotError):
    """A numerical routine failed (non-convergence, degenerate inputs)."""
