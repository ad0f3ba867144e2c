"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class HashLearnError(Exception):
    """Base class for all package errors."""


class ConfigError(HashLearnError):
    """Invalid configuration: bad hyperparameters, layer wiring, CLI usage."""


class DataError(HashLearnError):
    """Corrupt, truncated, or inconsistent data files."""


class NumericError(HashLearnError):
    """Non-finite values encountered where finite ones are required."""


class StateError(HashLearnError):
    """Operation called out of order (e.g. backward before forward)."""
