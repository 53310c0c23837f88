"""Exception types shared across the package.

Input-shaped problems subclass ValueError so that callers using generic
handlers still behave sensibly; the CLI maps these classes onto exit codes.
"""


class EchoBenchError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(EchoBenchError, ValueError):
    """An array has the wrong rank or an incompatible length."""


class EmptyInputError(EchoBenchError, ValueError):
    """An operation that needs at least one element got none."""


class InvalidInputError(EchoBenchError, ValueError):
    """A value is out of range, non-finite, or otherwise malformed."""


class NonFiniteError(InvalidInputError):
    """An array contains NaN or infinity where finite values are required.

    Split from InvalidInputError so callers can tell numeric blow-ups
    (recoverable as divergence) apart from structural mistakes.
    """


class ValidationError(EchoBenchError, ValueError):
    """A structural constraint between inputs is violated."""


class MissingViewError(EchoBenchError, ValueError):
    """A study lacks the clips required by the requested encoding mode."""


class ConfigError(EchoBenchError, ValueError):
    """A run configuration file failed schema validation."""


class StorageFormatError(EchoBenchError, ValueError):
    """A file on disk does not match the expected binary or text format."""


class TrainingDivergedError(EchoBenchError, RuntimeError):
    """Training produced a non-finite loss or parameter."""
