"""Streaming multilingual transducer speech recognition at desk scale."""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    DatasetFormatError,
    NonFiniteError,
    RntkError,
    StreamClosedError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractViolation",
    "DatasetFormatError",
    "NonFiniteError",
    "RntkError",
    "StreamClosedError",
    "__version__",
]
