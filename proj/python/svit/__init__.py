"""Semantic-segment vision transformer core bindings."""

from ._svit import (
    MANIFEST_VERSION,
    MAX_SEGMENT_TOKENS,
    Checkpoint,
    ConfigError,
    ContractError,
    Error,
    FormatError,
    NumericError,
    decode_masks,
    manifest_from_masks,
    manifest_info,
    save_initial_checkpoint,
    segment_label_map,
    tokenize,
)

__all__ = [
    "MANIFEST_VERSION",
    "MAX_SEGMENT_TOKENS",
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "Error",
    "FormatError",
    "NumericError",
    "decode_masks",
    "manifest_from_masks",
    "manifest_info",
    "save_initial_checkpoint",
    "segment_label_map",
    "tokenize",
]
