"""Sparse attention over a low-rank latent key cache."""

from ._core import (
    AttentionConfig,
    ConvergenceError,
    FormatError,
    InvalidArgument,
    IoError,
    RopePairing,
    SelectionPolicy,
    TrafficMode,
    apply_rope,
    calibrate,
    decode,
    full_attention,
    memory_speedup,
    quantize_roundtrip,
    rank_at_variance,
    read_tensor,
    select_topk,
    write_tensor,
)

__all__ = [
    "AttentionConfig",
    "ConvergenceError",
    "FormatError",
    "InvalidArgument",
    "IoError",
    "RopePairing",
    "SelectionPolicy",
    "TrafficMode",
    "apply_rope",
    "calibrate",
    "decode",
    "full_attention",
    "memory_speedup",
    "quantize_roundtrip",
    "rank_at_variance",
    "read_tensor",
    "select_topk",
    "write_tensor",
]
