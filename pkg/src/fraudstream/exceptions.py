"""Exception types raised across :mod:`fraudstream`."""


class FraudStreamError(Exception):
    """Base class for all package errors."""


class ConfigError(FraudStreamError, ValueError):
    """Invalid generator, strategy or experiment configuration."""


class DatasetParseError(FraudStreamError, ValueError):
    """A dataset file violates the CSV schema.

    ``row`` is the 1-based data row (header excluded), ``column`` the offending
    column name; either may be ``None`` for file-level problems.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} at {', '.join(loc)}" if loc else message)


class TrainingError(FraudStreamError, ValueError):
    """A model cannot be trained on the supplied samples."""


class DimensionError(FraudStreamError, ValueError):
    """Feature vector length does not match the fitted model."""


class UndefinedMetricError(FraudStreamError, ValueError):
    """A metric is undefined for the given inputs (e.g. a single class)."""


class BudgetExceededError(FraudStreamError, RuntimeError):
    """The investigator oracle was asked for more labels than the daily budget."""


class ComparisonError(FraudStreamError, ValueError):
    """Run records cannot be compared (mismatched day x repetition grids)."""
