"""Exception hierarchy shared by every rntk module."""


class RntkError(Exception):
    """Base class for all library errors."""


class ContractViolation(RntkError, ValueError):
    """An operation was called with arguments that break its preconditions."""


class NonFiniteError(RntkError, FloatingPointError):
    """NaN or Inf found where finite values are required."""

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class DatasetFormatError(RntkError):
    """A dataset file could not be parsed.

    Attributes:
        line: 1-based line number of the offending line, or None when the
            problem is structural (e.g. a record count mismatch).
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(RntkError):
    """A checkpoint container is malformed, truncated or inconsistent."""


class StreamClosedError(RntkError):
    """A frame was pushed to a stream whose microphone is already closed."""


class ConfigError(RntkError):
    """A run configuration is invalid (unknown key, bad value, missing file)."""
