"""Streaming point-map reconstruction with a compact camera-token pool."""

from ._streamrec import (
    DegenerateError,
    EmptyInputError,
    FormatError,
    ModelConfig,
    OrderingError,
    ShapeError,
    chamfer,
    generate_scene,
    memory_footprint,
    pose_metrics,
    read_sequence,
    reconstruct,
    self_check,
    umeyama_align,
    window_mask,
    window_schedule,
)

__all__ = [
    "DegenerateError",
    "EmptyInputError",
    "FormatError",
    "ModelConfig",
    "OrderingError",
    "ShapeError",
    "chamfer",
    "generate_scene",
    "memory_footprint",
    "pose_metrics",
    "read_sequence",
    "reconstruct",
    "self_check",
    "umeyama_align",
    "window_mask",
    "window_schedule",
]
