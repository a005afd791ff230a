"""Exception hierarchy.

The CLI maps each family onto an exit code, so every error raised by the
library derives from one of the three roots below.
"""


class SubselError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(SubselError, ValueError):
    """Invalid option, argument domain or method configuration."""

    exit_code = 2


class DomainError(ConfigError):
    """A numeric argument lies outside its admissible range."""


class DataError(SubselError, ValueError):
    """Input data violate a structural or value constraint."""

    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"row {row}, column {column!r}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateColumnError(DataError):
    pass


class FoldError(DataError):
    """A cross-fitting training complement lacks one treatment arm."""


class NumericError(SubselError, ArithmeticError):
    exit_code = 4


class SingularDesignError(NumericError):
    pass


class SeparationError(NumericError):
    """Logistic fit diverged (complete or quasi-complete separation)."""
