"""Exception hierarchy.

The CLI maps each family onto its own exit code, so callers should raise the
most specific class that applies.
"""


class RegimeVarError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(RegimeVarError):
    exit_code = 2


class DataError(RegimeVarError):
    """Input data violates a precondition (positivity, ordering, length...)."""

    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class InsufficientDataError(DataError):
    pass


class NumericalError(RegimeVarError):
    exit_code = 4


class RegimeCollapseError(NumericalError):
    """An EM regime lost (almost) all of its responsibility mass."""


class TrainingFailedError(NumericalError):
    """Every training attempt of a network was aborted."""
