"""Conv, batch-norm and ReLU layers with hand-derived backward passes.

Convolutions are stride 1 with zero padding. The production path lowers
the convolution to one matrix multiply (im2col); :func:`conv_forward_reference`
is a direct loop implementation used to check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from drdn.conv_arith import LayerSpec, output_size
from drdn.errors import DegenerateBatch, ShapeMismatch
from drdn.tensor_core import DTYPE, Rng, check_finite, fill_gaussian


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_channels, in_channels, k, k)
    bias: Optional[np.ndarray] = None  # (out_channels,)
    spec: LayerSpec = field(default_factory=lambda: LayerSpec(3, 1, 1, 1))

    @classmethod
    def create(cls, in_channels, out_channels, kernel_size=3, dilation=1, padding=None,
               bias=True, dtype=DTYPE):
        if padding is None:
            padding = dilation * (kernel_size - 1) // 2
        weights = np.zeros((out_channels, in_channels, kernel_size, kernel_size), dtype=dtype)
        b = np.zeros(out_channels, dtype=dtype) if bias else None
        return cls(weights, b, LayerSpec(kernel_size, padding, 1, dilation))

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def out_channels(self):
        return self.weights.shape[0]

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeMismatch(f"conv weights must be (O, C, k, k), got {self.weights.shape}")
        if self.weights.shape[2] != self.spec.filter_size:
            raise ShapeMismatch("weight kernel size does not match layer spec")
        if self.spec.stride != 1:
            raise ValueError("only stride-1 convolution is supported")
        if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch("bias must have one entry per output channel")


@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    training: bool = True

    @classmethod
    def create(cls, channels, epsilon=1e-5, momentum=0.1, dtype=DTYPE):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


@dataclass
class LayerGradients:
    d_input: Optional[np.ndarray] = None
    d_weights: Optional[np.ndarray] = None
    d_bias: Optional[np.ndarray] = None
    d_gamma: Optional[np.ndarray] = None
    d_beta: Optional[np.ndarray] = None


@dataclass
class BnCache:
    x_hat: np.ndarray
    inv_std: np.ndarray  # (C,)
    training: bool


# ---------------------------------------------------------------- convolution

def _output_hw(layer: ConvLayer, x: np.ndarray):
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) input, got {x.shape}")
    if x.shape[1] != layer.in_channels:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    return output_size(x.shape[2], layer.spec), output_size(x.shape[3], layer.spec)


def im2col(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Columns of shape (C*k*k, N*Ho*Wo), rows ordered (c, u, v)."""
    n, c, h, w = x.shape
    k, p, d = layer.spec.filter_size, layer.spec.padding, layer.spec.dilation
    ho, wo = _output_hw(layer, x)
    xt = x.transpose(1, 0, 2, 3)
    if p:
        xp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=x.dtype)
        xp[:, :, p:p + h, p:p + w] = xt
    else:
        xp = xt
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = xp[:, :, d * u:d * u + ho, d * v:d * v + wo]
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(layer: ConvLayer, cols: np.ndarray, input_shape) -> np.ndarray:
    """Adjoint of :func:`im2col`; taps that landed in padding are dropped."""
    n, c, h, w = input_shape
    k, p, d = layer.spec.filter_size, layer.spec.padding, layer.spec.dilation
    ho, wo = output_size(h, layer.spec), output_size(w, layer.spec)
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for u in range(k):
        for v in range(k):
            xp[:, :, d * u:d * u + ho, d * v:d * v + wo] += cols[:, u, v]
    return np.ascontiguousarray(xp[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3))


def conv_forward(layer: ConvLayer, x: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
    """``out[n,o,y,x] = sum_{c,u,v} w[o,c,u,v] * in[n, c, y + d*u - p, x + d*v - p] (+ b[o])``."""
    ho, wo = _output_hw(layer, x)
    if cols is None:
        cols = im2col(layer, x)
    w2 = layer.weights.reshape(layer.out_channels, -1)
    out = w2 @ cols
    if layer.bias is not None:
        out += layer.bias[:, None]
    out = out.reshape(layer.out_channels, x.shape[0], ho, wo).transpose(1, 0, 2, 3)
    return check_finite(np.ascontiguousarray(out), "conv_forward")


def conv_backward(layer: ConvLayer, x: np.ndarray, d_out: np.ndarray,
                  cols: Optional[np.ndarray] = None, need_input_grad: bool = True) -> LayerGradients:
    ho, wo = _output_hw(layer, x)
    expected = (x.shape[0], layer.out_channels, ho, wo)
    if d_out.shape != expected:
        raise ShapeMismatch(f"d_output shape {d_out.shape} != forward output shape {expected}")
    if cols is None:
        cols = im2col(layer, x)
    g = d_out.transpose(1, 0, 2, 3).reshape(layer.out_channels, -1)
    d_weights = (g @ cols.T).reshape(layer.weights.shape)
    d_bias = g.sum(axis=1, dtype=np.float64).astype(x.dtype) if layer.bias is not None else None
    d_input = None
    if need_input_grad:
        w2 = layer.weights.reshape(layer.out_channels, -1)
        d_input = col2im(layer, w2.T @ g, x.shape)
    return LayerGradients(d_input=d_input, d_weights=d_weights, d_bias=d_bias)


def conv_forward_reference(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Direct loop convolution. Slow; for testing only."""
    ho, wo = _output_hw(layer, x)
    n, c, h, w = x.shape
    k, p, d = layer.spec.filter_size, layer.spec.padding, layer.spec.dilation
    out = np.zeros((n, layer.out_channels, ho, wo), dtype=np.float64)
    wt = layer.weights.astype(np.float64)
    for yy in range(ho):
        for xx in range(wo):
            for u in range(k):
                iy = yy + d * u - p
                if iy < 0 or iy >= h:
                    continue
                for v in range(k):
                    ix = xx + d * v - p
                    if ix < 0 or ix >= w:
                        continue
                    # (n, c) x (o, c) -> (n, o)
                    out[:, :, yy, xx] += x[:, :, iy, ix].astype(np.float64) @ wt[:, :, u, v].T
    if layer.bias is not None:
        out += layer.bias.astype(np.float64)[None, :, None, None]
    return out.astype(x.dtype)


def msra_init(layer: ConvLayer, rng: Rng) -> ConvLayer:
    """He/MSRA init: weights ~ N(0, 2 / fan_in), fan_in = C_in * k * k; zero bias."""
    fan_in = layer.in_channels * layer.spec.filter_size ** 2
    std = float(np.sqrt(2.0 / fan_in))
    layer.weights[...] = fill_gaussian(layer.weights.shape, 0.0, std, rng, dtype=layer.weights.dtype)
    if layer.bias is not None:
        layer.bias[...] = 0
    return layer


# ---------------------------------------------------------------- batch norm

def bn_forward(layer: BatchNormLayer, x: np.ndarray):
    """Returns ``(output, cache)``. Training mode normalizes with batch stats
    over (N, H, W) and updates running stats; inference uses running stats."""
    if x.ndim != 4 or x.shape[1] != layer.channels:
        raise ShapeMismatch(f"batch norm over {layer.channels} channels got input {x.shape}")
    dt = x.dtype
    if layer.training:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count == 1:
            raise DegenerateBatch("batch norm needs more than one value per channel in training mode")
        mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
        centered = x - mean.astype(dt)[None, :, None, None]
        var = np.mean(np.square(centered, dtype=np.float64), axis=(0, 2, 3))
        m = layer.momentum
        layer.running_mean[...] = (1 - m) * layer.running_mean + m * mean
        layer.running_var[...] = (1 - m) * layer.running_var + m * var
    else:
        mean = layer.running_mean.astype(np.float64)
        var = layer.running_var.astype(np.float64)
        centered = x - mean.astype(dt)[None, :, None, None]
    inv_std = (1.0 / np.sqrt(var + layer.epsilon)).astype(dt)
    x_hat = centered * inv_std[None, :, None, None]
    out = x_hat * layer.gamma[None, :, None, None] + layer.beta[None, :, None, None]
    return check_finite(out, "bn_forward"), BnCache(x_hat, inv_std, layer.training)


def bn_backward(layer: BatchNormLayer, cache: BnCache, d_out: np.ndarray) -> LayerGradients:
    if d_out.shape != cache.x_hat.shape:
        raise ShapeMismatch(f"d_output shape {d_out.shape} != cached shape {cache.x_hat.shape}")
    dt = d_out.dtype
    d_beta = d_out.sum(axis=(0, 2, 3), dtype=np.float64)
    d_gamma = (d_out * cache.x_hat).sum(axis=(0, 2, 3), dtype=np.float64)
    scale = (layer.gamma * cache.inv_std)[None, :, None, None]
    if cache.training:
        count = d_out.shape[0] * d_out.shape[2] * d_out.shape[3]
        mean_d = (d_beta / count).astype(dt)[None, :, None, None]
        mean_dx = (d_gamma / count).astype(dt)[None, :, None, None]
        d_input = scale * (d_out - mean_d - cache.x_hat * mean_dx)
    else:
        d_input = scale * d_out
    return LayerGradients(d_input=d_input, d_gamma=d_gamma.astype(dt), d_beta=d_beta.astype(dt))


# ---------------------------------------------------------------- relu

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Gradient passes where the forward input was strictly positive."""
    if d_out.shape != x.shape:
        raise ShapeMismatch("relu_backward: shapes differ")
    return np.where(x > 0, d_out, 0).astype(d_out.dtype, copy=False)
