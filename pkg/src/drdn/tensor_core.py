"""Rank-4 float tensor helpers on top of numpy.

Tensors are plain ``numpy.ndarray`` objects of shape (N, C, H, W). The
functions here add the shape checks, fixed dtype, and seeded sampling the
rest of the package relies on.
"""

from __future__ import annotations

import os

import numpy as np

from drdn.errors import NumericalError, ShapeMismatch

DTYPE = np.float32

# Finite checks on every layer output are opt-in (DRDN_DEBUG=1).
DEBUG = os.environ.get("DRDN_DEBUG", "0") not in ("", "0")


class Rng:
    """Seeded random stream. Same seed, same samples."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from this seed and ``key``."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        child.generator = np.random.Generator(np.random.PCG64(seq))
        return child

    def normal(self, shape, mean=0.0, stddev=1.0) -> np.ndarray:
        return fill_gaussian(shape, mean, stddev, self)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def zeros(shape, dtype=DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def as_tensor(data, dtype=DTYPE) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected a rank-4 tensor, got shape {arr.shape}")
    return arr


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 1 for s in shape):
        raise ShapeMismatch(f"invalid tensor shape {shape}")
    return shape


def flat_index(shape, n, c, h, w) -> int:
    """Row-major offset of element (n, c, h, w)."""
    _, C, H, W = shape
    return ((n * C + c) * H + h) * W + w


def unflat_index(shape, offset):
    _, C, H, W = shape
    offset, w = divmod(offset, W)
    offset, h = divmod(offset, H)
    n, c = divmod(offset, C)
    return n, c, h, w


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Apply ``add``, ``sub``, ``mul``, ``scale`` or ``max_with_zero``.

    Binary ops take a tensor of identical shape or a scalar; no broadcasting
    between tensors of different shapes.
    """
    if op == "max_with_zero":
        return np.maximum(a, 0).astype(a.dtype, copy=False)
    if op == "scale":
        if not np.isscalar(b):
            raise TypeError("scale expects a scalar")
        return (a * a.dtype.type(b)).astype(a.dtype, copy=False)
    try:
        fn = _BINARY[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if isinstance(b, np.ndarray):
        if b.shape != a.shape:
            raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")
    elif np.isscalar(b):
        b = a.dtype.type(b)
    else:
        raise TypeError(f"{op}: second operand must be a tensor or scalar")
    return fn(a, b).astype(a.dtype, copy=False)


def reduce(op: str, a: np.ndarray, axes=None) -> np.ndarray:
    """``sum``, ``mean`` or ``sum_of_squares`` over ``axes`` (all if None).

    Accumulates in float64; reduced axes are kept with size 1.
    """
    if axes is None:
        axes = tuple(range(a.ndim))
    axes = tuple(sorted(set(int(ax) for ax in np.atleast_1d(axes))))
    if any(ax < 0 or ax >= a.ndim for ax in axes):
        raise ValueError(f"invalid axes {axes} for rank {a.ndim}")
    if op == "sum":
        out = np.sum(a, axis=axes, dtype=np.float64, keepdims=True)
    elif op == "mean":
        out = np.mean(a, axis=axes, dtype=np.float64, keepdims=True)
    elif op == "sum_of_squares":
        a64 = a.astype(np.float64)
        out = np.sum(a64 * a64, axis=axes, keepdims=True)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return out.astype(a.dtype, copy=False)


def fill_gaussian(shape, mean: float, stddev: float, rng: Rng, dtype=DTYPE) -> np.ndarray:
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    shape = tuple(int(s) for s in shape)
    samples = rng.generator.standard_normal(shape, dtype=np.float64)
    return (mean + stddev * samples).astype(dtype)


def check_finite(a: np.ndarray, where: str = "", force: bool = False):
    if (DEBUG or force) and not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in {where or 'tensor'}")
    return a
