"""Exception types shared across the package."""


class ZptError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ZptError, ValueError):
    """A configuration or precondition is invalid (maps to CLI exit code 2)."""


class DataFormatError(ZptError, ValueError):
    """An on-disk record is malformed; the message names the offending file/line."""


class TrainingError(ZptError, RuntimeError):
    """Training diverged or hit an invalid state; the message names epoch/step."""


class CheckpointError(ZptError, RuntimeError):
    """A checkpoint is corrupt, truncated, or has an unsupported schema."""
