"""Versioned binary checkpoints.

Layout (little-endian): magic ``WDHN``, u16 format version, six i64 config
fields (scales, channels, classes, input_channels, seed, blocks), then every
parameter followed by every normalisation buffer as 8-byte floats, each in
declaration order. Array shapes follow from the config.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import HolisticModel, NetworkConfig

MAGIC = b"WDHN"
VERSION = 1
_HEAD = struct.Struct("<4sH6q")


def to_bytes(model: HolisticModel) -> bytes:
    c = model.config
    parts = [_HEAD.pack(MAGIC, VERSION, c.scales, c.channels, c.classes, c.input_channels, c.seed, c.blocks)]
    for a in list(model.params.values()) + list(model.buffers.values()):
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> HolisticModel:
    if len(data) < _HEAD.size:
        raise ValueError("truncated checkpoint")
    magic, version, *fields = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a checkpoint file")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    model = HolisticModel.init(NetworkConfig(*fields))
    arrays = list(model.params.items()) + list(model.buffers.items())
    expected = _HEAD.size + 8 * sum(a.size for _, a in arrays)
    if len(data) != expected:
        raise ValueError(f"checkpoint has {len(data)} bytes, expected {expected}")
    off = _HEAD.size
    for name, a in arrays:
        v = np.frombuffer(data, dtype="<f8", count=a.size, offset=off).reshape(a.shape).astype(np.float64)
        off += 8 * a.size
        (model.params if name in model.params else model.buffers)[name] = v
    return model


def save(model: HolisticModel, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path) -> HolisticModel:
    return from_bytes(Path(path).read_bytes())
