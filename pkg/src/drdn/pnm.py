"""Netpbm reader/writer for 8-bit gray (P2/P5) and color (P3/P6) images."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple, Union

import numpy as np

from drdn.errors import FormatError

_CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}
_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int) -> Tuple[list, int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens as (value, offset) pairs and the position just past
    the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WHITESPACE:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise FormatError("truncated header", pos)
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tokens.append((data[start:pos], start))
    return tokens, pos


def decode(data: bytes) -> np.ndarray:
    """Parse PNM bytes into a uint8 array of shape (C, H, W)."""
    if len(data) < 2 or data[:2] not in _CHANNELS:
        raise FormatError(f"unsupported PNM magic {data[:2]!r}", 0)
    magic = data[:2]
    channels = _CHANNELS[magic]
    tokens, pos = _header_tokens(data[2:], 3)
    values = []
    for token, offset in tokens:
        if not token.isdigit():
            raise FormatError(f"expected an integer in header, got {token!r}", offset + 2)
        values.append(int(token))
    width, height, maxval = values
    pos += 2
    if width < 1 or height < 1:
        raise FormatError("image dimensions must be positive", tokens[0][1] + 2)
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", tokens[2][1] + 2)
    count = width * height * channels

    if magic in (b"P5", b"P6"):
        if pos >= len(data) or data[pos] not in _WHITESPACE:
            raise FormatError("missing whitespace after header", pos)
        pos += 1
        raster = data[pos:pos + count]
        if len(raster) < count:
            raise FormatError(f"raster truncated: need {count} bytes, found {len(raster)}", pos + len(raster))
        flat = np.frombuffer(raster, dtype=np.uint8)
    else:
        body = data[pos:]
        fields = body.split()
        if len(fields) < count:
            raise FormatError(f"raster truncated: need {count} samples, found {len(fields)}", len(data))
        try:
            ints = np.array([int(f) for f in fields[:count]], dtype=np.int64)
        except ValueError:
            bad = next(f for f in fields[:count] if not f.isdigit())
            raise FormatError(f"non-integer sample {bad!r}", pos + body.find(bad)) from None
        if ints.max(initial=0) > 255:
            raise FormatError("sample exceeds maxval", pos)
        flat = ints.astype(np.uint8)
    return flat.reshape(height, width, channels).transpose(2, 0, 1).copy()


def encode(pixels: np.ndarray, binary: bool = True) -> bytes:
    """Encode a uint8 (C, H, W) array; C=1 gives P5/P2, C=3 gives P6/P3."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise ValueError(f"PNM supports 1 or 3 channels, got {c}")
    if pixels.dtype != np.uint8:
        raise TypeError("encode expects uint8 samples")
    magic = {(1, True): "P5", (3, True): "P6", (1, False): "P2", (3, False): "P3"}[(c, binary)]
    header = f"{magic}\n{w} {h}\n255\n".encode("ascii")
    interleaved = pixels.transpose(1, 2, 0)
    if binary:
        return header + interleaved.tobytes()
    rows = [" ".join(str(v) for v in row.ravel()) for row in interleaved]
    return header + ("\n".join(rows) + "\n").encode("ascii")


def read(path: Union[str, Path]) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path: Union[str, Path], pixels: np.ndarray, binary: bool = True):
    Path(path).write_bytes(encode(pixels, binary))
