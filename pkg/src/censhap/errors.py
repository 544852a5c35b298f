"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class CenShapError(Exception):
    """Base class for all package errors."""


class ConfigError(CenShapError):
    """Invalid run configuration or invalid argument combination."""


class DataError(CenShapError):
    """Malformed input data; schema violations; unreadable model files."""


class NumericError(CenShapError):
    """Numerical failure: invalid loss arguments, singular systems, diverged fits."""
