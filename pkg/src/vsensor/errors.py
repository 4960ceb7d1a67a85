"""Exception hierarchy shared by the whole package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class VirtualSensorError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(VirtualSensorError, ValueError):
    """An argument, hyper-parameter, or configuration value is invalid."""


class DataError(VirtualSensorError, ValueError):
    """Data is malformed, inconsistent, or incompatible with a model."""


class NumericalError(VirtualSensorError, ArithmeticError):
    """A numerical procedure diverged, lost rank, or failed to converge."""
