"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InputError and
FormatError -> 3, NumericalError -> 4.
"""


class TrifusionError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TrifusionError):
    """Tensor shapes do not satisfy an operation's requirements."""


class ContractError(TrifusionError):
    """An API was called outside its contract (e.g. backward on a non-scalar)."""


class ConfigError(TrifusionError):
    """Invalid configuration value or combination."""


class InputError(TrifusionError):
    """Invalid runtime input (empty dataset, out-of-range argument, ...)."""


class DegenerateDesignError(InputError):
    """A fit or optimum is undefined for the given inputs."""


class FormatError(TrifusionError):
    """A file does not conform to the expected binary/CSV layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(TrifusionError):
    """A computation produced a non-finite value."""
