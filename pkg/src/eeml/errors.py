"""Exception types shared across the package."""


class EEMLError(Exception):
    """Base class for every error raised by this package."""


class InputError(EEMLError, ValueError):
    """An argument violates an operation's preconditions."""


class NumericError(EEMLError, ArithmeticError):
    """A computation produced NaN or Inf."""

    def __init__(self, message, step=None, expert=None):
        super().__init__(message)
        self.step = step
        self.expert = expert


class DegenerateEmbeddingError(EEMLError):
    """A task gradient is exactly zero and cannot be normalized."""


class ConfigError(EEMLError):
    """Invalid experiment configuration."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DependencyError(EEMLError):
    """A pipeline stage needs an artifact that does not exist yet."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class CheckpointError(EEMLError):
    """A checkpoint file is corrupt or does not match the expected shape."""


class CheckpointVersionError(CheckpointError):
    """A checkpoint was written by an unsupported format version."""
