"""Exception types shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad field values, dimension mismatches."""


class DataError(ValueError):
    """Invalid data: unknown keys, malformed rows, values outside the support."""


class DomainError(DataError):
    """A value lies outside the mathematical domain of an operation."""


class NumericError(RuntimeError):
    """A numerical procedure failed to converge or produced non-finite values."""
