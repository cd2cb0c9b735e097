"""Instruction-based time-series editing."""

from ._instructtime import (
    CheckpointError,
    ConfigError,
    CorruptCheckpointError,
    Error,
    FingerprintMismatchError,
    FormatVersionError,
    HashEmbedder,
    InputError,
    Model,
    SchemaError,
    TruncatedCheckpointError,
    UsageError,
    dtw,
    generate_dataset,
    load_dataset,
    rats,
    spearman,
    write_dataset,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "CorruptCheckpointError",
    "Error",
    "FingerprintMismatchError",
    "FormatVersionError",
    "HashEmbedder",
    "InputError",
    "Model",
    "SchemaError",
    "TruncatedCheckpointError",
    "UsageError",
    "dtw",
    "generate_dataset",
    "load_dataset",
    "rats",
    "spearman",
    "write_dataset",
]
