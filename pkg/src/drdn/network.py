"""The dilated residual denoiser.

Layout for depth D::

    layer 1        Conv(d=1) + ReLU
    layers 2..D-1  DilatedConv(d=2, p=2) + BN + ReLU
    layer D        Conv(d=1)

The network predicts the noise map f(y); the clean estimate is y - f(y).
"""

from __future__ import annotations

import contextlib
import copy
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from drdn.conv_arith import LayerSpec, LayerStackSpec, denoiser_dilations, receptive_field
from drdn.errors import ConfigInvalid, IndexOutOfRange, ShapeMismatch
from drdn.layers import (
    BatchNormLayer,
    ConvLayer,
    bn_backward,
    bn_forward,
    conv_backward,
    conv_forward,
    im2col,
    msra_init,
    relu_backward,
    relu_forward,
)
from drdn.tensor_core import DTYPE, Rng

KERNEL_SIZE = 3


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 10
    feature_width: int = 64
    io_channels: int = 1
    patch_size: int = 40
    dilation_schedule: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.depth < 3:
            raise ConfigInvalid(f"depth must be >= 3, got {self.depth}")
        if self.feature_width < 1 or self.io_channels < 1 or self.patch_size < 1:
            raise ConfigInvalid("feature_width, io_channels and patch_size must be positive")
        if not self.dilation_schedule:
            object.__setattr__(self, "dilation_schedule", tuple(denoiser_dilations(self.depth)))
        schedule = tuple(int(d) for d in self.dilation_schedule)
        object.__setattr__(self, "dilation_schedule", schedule)
        if schedule != tuple(denoiser_dilations(self.depth)):
            raise ConfigInvalid(
                f"dilation schedule must be 1, 2 x {self.depth - 2}, 1; got {schedule}"
            )

    @property
    def layer_specs(self) -> List[LayerSpec]:
        return [LayerSpec(KERNEL_SIZE, d, 1, d) for d in self.dilation_schedule]

    @property
    def receptive_field(self) -> int:
        table = receptive_field(LayerStackSpec(tuple(self.layer_specs), self.patch_size))
        return table.per_layer[-1].receptive_field


GRAY = NetworkConfig(depth=10, feature_width=64, io_channels=1, patch_size=40)
COLOR = NetworkConfig(depth=12, feature_width=64, io_channels=3, patch_size=50)
PRESETS = {"gray": GRAY, "color": COLOR}


@dataclass
class Block:
    conv: ConvLayer
    bn: Optional[BatchNormLayer] = None
    relu: bool = True


@dataclass
class ResidualPair:
    noisy: np.ndarray  # (C, H, W)
    clean: np.ndarray
    sigma: float = 0.0


@dataclass
class DenoiserModel:
    config: NetworkConfig
    blocks: List[Block] = field(default_factory=list)

    @property
    def training(self) -> bool:
        return any(b.bn.training for b in self.blocks if b.bn is not None)

    def train(self):
        for b in self.blocks:
            if b.bn is not None:
                b.bn.training = True
        return self

    def eval(self):
        for b in self.blocks:
            if b.bn is not None:
                b.bn.training = False
        return self

    @property
    def dtype(self):
        return self.blocks[0].conv.weights.dtype

    def astype(self, dtype) -> "DenoiserModel":
        """Deep copy with every array cast to ``dtype`` (float64 for gradient checks)."""
        clone = copy.deepcopy(self)
        for b in clone.blocks:
            b.conv.weights = b.conv.weights.astype(dtype)
            if b.conv.bias is not None:
                b.conv.bias = b.conv.bias.astype(dtype)
            if b.bn is not None:
                for name in ("gamma", "beta", "running_mean", "running_var"):
                    setattr(b.bn, name, getattr(b.bn, name).astype(dtype))
        return clone

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        """Learnable arrays in network order (running statistics excluded)."""
        params = []
        for i, b in enumerate(self.blocks, start=1):
            params.append((f"conv{i}.weight", b.conv.weights))
            if b.conv.bias is not None:
                params.append((f"conv{i}.bias", b.conv.bias))
            if b.bn is not None:
                params.append((f"bn{i}.gamma", b.bn.gamma))
                params.append((f"bn{i}.beta", b.bn.beta))
        return params

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return dict(self.parameters())


def build(config: NetworkConfig, rng: Optional[Rng] = None, init: bool = True, warn: bool = True) -> DenoiserModel:
    """Assemble the denoiser; conv layers MSRA-initialised unless ``init`` is False (all zeros)."""
    if rng is None:
        rng = Rng(0)
    if warn and config.receptive_field >= config.patch_size:
        warnings.warn(
            f"receptive field {config.receptive_field} is not smaller than patch size "
            f"{config.patch_size}; the network sees context beyond each patch",
            stacklevel=2,
        )
    D, W, C = config.depth, config.feature_width, config.io_channels
    blocks = []
    for index, d in enumerate(config.dilation_schedule, start=1):
        first, last = index == 1, index == D
        conv = ConvLayer.create(
            in_channels=C if first else W,
            out_channels=C if last else W,
            kernel_size=KERNEL_SIZE,
            dilation=d,
            padding=d,
            bias=first or last,
        )
        if init:
            msra_init(conv, rng)
        bn = None if (first or last) else BatchNormLayer.create(W)
        blocks.append(Block(conv, bn, relu=not last))
    return DenoiserModel(config, blocks)


def param_count(config: NetworkConfig) -> int:
    """Learnable scalars: conv weights, first/last conv biases, BN gamma and beta."""
    k2 = KERNEL_SIZE ** 2
    D, W, C = config.depth, config.feature_width, config.io_channels
    first = C * W * k2 + W
    middle = (D - 2) * (W * W * k2 + 2 * W)
    last = W * C * k2 + C
    return first + middle + last


@dataclass
class _Trace:
    x: np.ndarray
    cols: np.ndarray
    bn_cache: object = None
    out: Optional[np.ndarray] = None


def _check_input(model: DenoiserModel, y: np.ndarray):
    if y.ndim != 4 or y.shape[1] != model.config.io_channels:
        raise ShapeMismatch(
            f"model expects (N, {model.config.io_channels}, H, W), got {y.shape}"
        )


def _forward(model: DenoiserModel, y: np.ndarray, keep: bool):
    _check_input(model, y)
    h = np.ascontiguousarray(y, dtype=model.dtype)
    traces = []
    for b in model.blocks:
        cols = im2col(b.conv, h)
        trace = _Trace(h, cols if keep else None)
        h = conv_forward(b.conv, h, cols)
        if b.bn is not None:
            h, trace.bn_cache = bn_forward(b.bn, h)
        if b.relu:
            h = relu_forward(h)
        trace.out = h
        if keep:
            traces.append(trace)
    return h, traces


def forward_residual(model: DenoiserModel, y: np.ndarray) -> np.ndarray:
    """Predicted noise map f(y), same shape as ``y``."""
    out, _ = _forward(model, y, keep=False)
    return out


@contextlib.contextmanager
def inference(model: DenoiserModel) -> Iterator[DenoiserModel]:
    was_training = model.training
    model.eval()
    try:
        yield model
    finally:
        if was_training:
            model.train()


def denoise(model: DenoiserModel, y: np.ndarray) -> np.ndarray:
    """``clip(y - f(y), 0, 1)`` using running BN statistics."""
    with inference(model):
        residual = forward_residual(model, y)
    return np.clip(np.asarray(y, dtype=residual.dtype) - residual, 0.0, 1.0)


def loss(model: DenoiserModel, noisy: np.ndarray, clean: np.ndarray, with_grads: bool = True):
    """Residual L2 loss ``1/(2N) sum_i ||f(y_i) - (y_i - x_i)||^2`` and its gradients.

    Returns ``(value, grads)`` where ``grads`` maps parameter names (see
    ``DenoiserModel.parameters``) to arrays; ``grads`` is None if
    ``with_grads`` is False.
    """
    noisy = np.asarray(noisy)
    clean = np.asarray(clean)
    if noisy.shape != clean.shape:
        raise ShapeMismatch(f"noisy {noisy.shape} and clean {clean.shape} differ")
    if noisy.shape[0] < 1:
        raise ShapeMismatch("empty batch")
    n = noisy.shape[0]
    dt = model.dtype
    pred, traces = _forward(model, noisy, keep=with_grads)
    target = (noisy.astype(dt) - clean.astype(dt))
    diff = pred - target
    value = float(np.sum(np.square(diff, dtype=np.float64)) / (2.0 * n))
    if not with_grads:
        return value, None

    grads: Dict[str, np.ndarray] = {}
    g = diff / dt.type(n)
    for index in range(len(model.blocks), 0, -1):
        b, t = model.blocks[index - 1], traces[index - 1]
        if b.relu:
            g = relu_backward(t.out, g)
        if b.bn is not None:
            bg = bn_backward(b.bn, t.bn_cache, g)
            grads[f"bn{index}.gamma"] = bg.d_gamma
            grads[f"bn{index}.beta"] = bg.d_beta
            g = bg.d_input
        cg = conv_backward(b.conv, t.x, g, cols=t.cols, need_input_grad=index > 1)
        grads[f"conv{index}.weight"] = cg.d_weights
        if cg.d_bias is not None:
            grads[f"conv{index}.bias"] = cg.d_bias
        g = cg.d_input
        t.cols = None
    ordered = {name: grads[name] for name, _ in model.parameters()}
    return value, ordered


def layer_activations(model: DenoiserModel, y: np.ndarray, layer_index: int) -> np.ndarray:
    """Post-activation output of layer ``layer_index`` (1-based), inference mode."""
    if not 1 <= layer_index <= len(model.blocks):
        raise IndexOutOfRange(f"layer {layer_index} outside 1..{len(model.blocks)}")
    _check_input(model, y)
    with inference(model):
        h = np.ascontiguousarray(y, dtype=model.dtype)
        for b in model.blocks[:layer_index]:
            h = conv_forward(b.conv, h)
            if b.bn is not None:
                h, _ = bn_forward(b.bn, h)
            if b.relu:
                h = relu_forward(h)
    return h


def dump_feature_map(model: DenoiserModel, y: np.ndarray, layer_index: int) -> np.ndarray:
    """Channel with the highest spatial mean at ``layer_index``, min-max scaled to [0, 1].

    Uses the first image of the batch. Ties go to the lowest channel index;
    a constant map comes back as all zeros.
    """
    act = layer_activations(model, y, layer_index)[0].astype(np.float64)
    means = act.mean(axis=(1, 2))
    channel = int(np.argmax(means))  # argmax returns the first maximum
    fmap = act[channel]
    lo, hi = fmap.min(), fmap.max()
    if hi - lo <= 0:
        return np.zeros_like(fmap, dtype=DTYPE)
    return ((fmap - lo) / (hi - lo)).astype(DTYPE)
