"""Binary formats for weights and visual contexts.

Weight file:  b"MEMVRTOY" | u32 version | 7 x u32 config header | f32 payload
Visual file:  b"MEMVRIMG" | u32 d | u32 N_v | f32 payload, column-major

All integers and floats are little-endian. The weight payload follows
``model.parameter_layout`` order, each array row-major.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .config import ModelConfig
from .exceptions import MVConfigError, MVIOError, _file_error_for_reason
from .model import VisualContext, Weights, parameter_layout

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

WEIGHTS_MAGIC = b"MEMVRTOY"
WEIGHTS_VERSION = 1
VISUAL_MAGIC = b"MEMVRIMG"

_WEIGHTS_HEADER = struct.Struct("<8sI7I")
_VISUAL_HEADER = struct.Struct("<8sII")


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise MVIOError(f"cannot read {path}: {e.strerror or e}", path=path) from e


def _write_bytes(path: PathLike, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise MVIOError(f"cannot write {path}: {e.strerror or e}", path=path) from e
    logger.debug("wrote %d bytes to %s", len(data), path)


# ── weights ───────────────────────────────────────────────────────────────────

def serialize_weights(weights: Weights) -> bytes:
    header = _WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, *weights.config.as_header())
    payload = b"".join(arr.astype("<f4").tobytes() for _, arr in weights.parameters())
    return header + payload


def deserialize_weights(data: bytes, path: PathLike | None = None) -> Weights:
    if len(data) < len(WEIGHTS_MAGIC) or data[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise _file_error_for_reason("bad_magic", "bad magic: not a MEMVRTOY weight file", path)
    if len(data) < _WEIGHTS_HEADER.size:
        raise _file_error_for_reason(
            "truncated", f"truncated header: {len(data)} bytes, need {_WEIGHTS_HEADER.size}", path
        )
    _, version, *header = _WEIGHTS_HEADER.unpack_from(data)
    if version != WEIGHTS_VERSION:
        raise _file_error_for_reason(
            "version", f"version mismatch: file has {version}, expected {WEIGHTS_VERSION}", path
        )
    try:
        config = ModelConfig(*header)
    except MVConfigError as e:
        raise _file_error_for_reason("header", f"invalid config header: {e}", path) from e

    layout = parameter_layout(config)
    expected = sum(math.prod(shape) for _, shape, _ in layout) * 4
    payload = data[_WEIGHTS_HEADER.size:]
    if len(payload) != expected:
        raise _file_error_for_reason(
            "truncated",
            f"truncated payload: {len(payload)} bytes, header implies {expected}",
            path,
        )
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    arrays = []
    offset = 0
    for _, shape, _ in layout:
        n = math.prod(shape)
        arrays.append(flat[offset: offset + n].reshape(shape))
        offset += n
    return Weights.from_arrays(config, arrays)


def save_weights(weights: Weights, path: PathLike) -> str:
    """Write *weights* to *path*; returns the sha256 checksum of the file."""
    data = serialize_weights(weights)
    _write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_weights(path: PathLike) -> Weights:
    return deserialize_weights(_read_bytes(path), path)


def weights_checksum(weights: Weights) -> str:
    """sha256 of the serialized file contents."""
    return hashlib.sha256(serialize_weights(weights)).hexdigest()


# ── visual context ────────────────────────────────────────────────────────────

def serialize_visual(visual: VisualContext) -> bytes:
    header = _VISUAL_HEADER.pack(VISUAL_MAGIC, visual.dim, visual.num_tokens)
    # column-major: token columns laid out one after another
    return header + np.ascontiguousarray(visual.tokens.T).astype("<f4").tobytes()


def deserialize_visual(data: bytes, path: PathLike | None = None) -> VisualContext:
    if data[: len(VISUAL_MAGIC)] != VISUAL_MAGIC:
        raise _file_error_for_reason("bad_magic", "bad magic: not a MEMVRIMG visual file", path)
    if len(data) < _VISUAL_HEADER.size:
        raise _file_error_for_reason("truncated", "truncated visual header", path)
    _, dim, count = _VISUAL_HEADER.unpack_from(data)
    payload = data[_VISUAL_HEADER.size:]
    if len(payload) != dim * count * 4:
        raise _file_error_for_reason(
            "truncated",
            f"truncated payload: {len(payload)} bytes, header implies {dim * count * 4}",
            path,
        )
    columns = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(count, dim)
    return VisualContext(np.ascontiguousarray(columns.T))


def save_visual(visual: VisualContext, path: PathLike) -> None:
    _write_bytes(path, serialize_visual(visual))


def load_visual(path: PathLike) -> VisualContext:
    return deserialize_visual(_read_bytes(path), path)
