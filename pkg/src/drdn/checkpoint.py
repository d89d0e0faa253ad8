"""Binary checkpoint format.

Layout (all little-endian)::

    b"DRDN"                      magic
    u16                          format version (1)
    u32 x 4                      depth, feature_width, io_channels, patch_size
    u32 x depth                  dilation schedule
    records, in network order:
        u8                       kind tag (see TAGS)
        u32 x 4                  shape, padded with 1s to rank 4
        f32 x prod(shape)        payload
    u32                          CRC-32 of all payload bytes, in order

Per layer the records are: conv weight, conv bias (first/last layer only),
then BN gamma, beta, running mean, running var (middle layers only).
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from drdn.errors import ChecksumError, FormatError
from drdn.network import DenoiserModel, NetworkConfig, build

MAGIC = b"DRDN"
VERSION = 1

TAGS = {
    "conv.weight": 1,
    "conv.bias": 2,
    "bn.gamma": 3,
    "bn.beta": 4,
    "bn.running_mean": 5,
    "bn.running_var": 6,
}

_LE_F32 = np.dtype("<f4")


def _records(model: DenoiserModel) -> List[Tuple[int, np.ndarray]]:
    out = []
    for b in model.blocks:
        out.append((TAGS["conv.weight"], b.conv.weights))
        if b.conv.bias is not None:
            out.append((TAGS["conv.bias"], b.conv.bias))
        if b.bn is not None:
            out.append((TAGS["bn.gamma"], b.bn.gamma))
            out.append((TAGS["bn.beta"], b.bn.beta))
            out.append((TAGS["bn.running_mean"], b.bn.running_mean))
            out.append((TAGS["bn.running_var"], b.bn.running_var))
    return out


def to_bytes(model: DenoiserModel) -> bytes:
    cfg = model.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(struct.pack("<4I", cfg.depth, cfg.feature_width, cfg.io_channels, cfg.patch_size))
    buf.write(struct.pack(f"<{cfg.depth}I", *cfg.dilation_schedule))
    crc = 0
    for tag, arr in _records(model):
        dims = tuple(arr.shape) + (1,) * (4 - arr.ndim)
        buf.write(struct.pack("<B4I", tag, *dims))
        payload = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        crc = zlib.crc32(payload, crc)
        buf.write(payload)
    buf.write(struct.pack("<I", crc & 0xFFFFFFFF))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(data: bytes) -> DenoiserModel:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a DRDN checkpoint (bad magic)", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    depth, width, channels, patch = r.unpack("<4I", "config")
    dilations = r.unpack(f"<{depth}I", "dilation schedule")
    try:
        config = NetworkConfig(depth, width, channels, patch, tuple(dilations))
    except ValueError as exc:
        raise FormatError(f"invalid network config: {exc}", 6) from None

    model = build(config, init=False, warn=False)
    crc = 0
    for tag, target in _records(model):
        offset = r.pos
        got_tag, *dims = r.unpack("<B4I", "record header")
        if got_tag != tag:
            raise FormatError(f"expected record tag {tag}, found {got_tag}", offset)
        expected = tuple(target.shape) + (1,) * (4 - target.ndim)
        if tuple(dims) != expected:
            raise FormatError(f"record shape {tuple(dims)} != expected {expected}", offset)
        payload = r.take(target.size * 4, "record payload")
        crc = zlib.crc32(payload, crc)
        target[...] = np.frombuffer(payload, dtype=_LE_F32).reshape(target.shape)
    (stored,) = r.unpack("<I", "checksum")
    if stored != crc & 0xFFFFFFFF:
        raise ChecksumError("checkpoint checksum mismatch", r.pos - 4)
    if r.pos != len(data):
        raise FormatError("trailing bytes after checksum", r.pos)
    return model.eval()


def save(model: DenoiserModel, path: Union[str, Path]):
    Path(path).write_bytes(to_bytes(model))


def load(path: Union[str, Path]) -> DenoiserModel:
    return from_bytes(Path(path).read_bytes())
