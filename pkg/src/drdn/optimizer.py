"""SGD with momentum, weight decay and a one-step learning-rate drop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from drdn.errors import EpochOutOfRange, NumericalError, ShapeMismatch
from drdn.network import DenoiserModel, loss
from drdn.tensor_core import Rng

log = logging.getLogger(__name__)

EXPLOSION_FACTOR = 1e3


@dataclass
class TrainingConfig:
    momentum: float = 0.9
    batch_size: int = 128
    lr_initial: float = 1e-3
    lr_reduced: float = 1e-4
    lr_drop_epoch: int = 30
    total_epochs: int = 40
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr_reduced > self.lr_initial:
            raise ValueError("lr_reduced must not exceed lr_initial")
        if not 0 <= self.lr_drop_epoch < self.total_epochs:
            raise ValueError("lr_drop_epoch must lie within [0, total_epochs)")
        if self.batch_size < 1 or self.total_epochs < 1:
            raise ValueError("batch_size and total_epochs must be positive")


@dataclass
class OptimizerState:
    velocity: Dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0

    @classmethod
    def zeros_like(cls, model: DenoiserModel) -> "OptimizerState":
        return cls({name: np.zeros_like(p) for name, p in model.parameters()})


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float


def lr_at(config: TrainingConfig, epoch: int) -> float:
    if not 0 <= epoch < config.total_epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside 0..{config.total_epochs - 1}")
    return config.lr_initial if epoch < config.lr_drop_epoch else config.lr_reduced


def decays(name: str) -> bool:
    """Weight decay applies to conv filters only; biases and BN affine terms are exempt."""
    return name.endswith(".weight")


def step(model: DenoiserModel, grads: Dict[str, np.ndarray], state: OptimizerState,
         lr: float, momentum: float, weight_decay: float) -> OptimizerState:
    """In place: ``v <- m*v - lr*(g + wd*theta)``; ``theta <- theta + v``."""
    for name, param in model.parameters():
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {param.shape}")
        v = state.velocity[name]
        if weight_decay and decays(name):
            g = g + weight_decay * param
        v *= momentum
        v -= lr * g
        param += v
    state.step += 1
    return state


@dataclass
class PatchDataset:
    noisy: np.ndarray  # (N, C, P, P)
    clean: np.ndarray
    sigmas: np.ndarray = field(default=None)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noisy.shape != self.clean.shape:
            raise ShapeMismatch("noisy and clean patch arrays differ in shape")
        if self.sigmas is None:
            self.sigmas = np.zeros(len(self.noisy))

    def __len__(self):
        return self.noisy.shape[0]

    @property
    def patch_size(self):
        return self.noisy.shape[-1]


def batches_per_epoch(n: int, batch_size: int) -> int:
    return n // batch_size


def train(model: DenoiserModel, dataset: PatchDataset, config: TrainingConfig,
          state: Optional[OptimizerState] = None,
          on_epoch: Optional[Callable[[EpochRecord, DenoiserModel], None]] = None):
    """Run ``total_epochs`` passes of shuffled mini-batches.

    The last partial batch of each epoch is dropped. Returns
    ``(model, trace)`` where ``trace`` is one :class:`EpochRecord` per epoch.
    """
    n = len(dataset)
    nb = batches_per_epoch(n, config.batch_size)
    if nb == 0:
        raise ValueError(f"dataset of {n} patches is smaller than one batch of {config.batch_size}")
    if state is None:
        state = OptimizerState.zeros_like(model)
    rng = Rng(config.seed)
    model.train()
    initial_loss = None
    trace: List[EpochRecord] = []
    for epoch in range(config.total_epochs):
        lr = lr_at(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for b in range(nb):
            idx = np.sort(order[b * config.batch_size:(b + 1) * config.batch_size])
            value, grads = loss(model, dataset.noisy[idx], dataset.clean[idx])
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at step {state.step}", step=state.step)
            if initial_loss is None:
                initial_loss = value
            elif value > EXPLOSION_FACTOR * initial_loss:
                raise NumericalError(
                    f"loss {value:.4g} exceeds {EXPLOSION_FACTOR:g}x the initial loss at step {state.step}",
                    step=state.step,
                )
            step(model, grads, state, lr, config.momentum, config.weight_decay)
            total += value
        state.epoch = epoch + 1
        record = EpochRecord(epoch, total / nb, lr)
        trace.append(record)
        log.info("epoch %d  loss %.6f  lr %g", epoch, record.mean_loss, lr)
        if on_epoch is not None:
            on_epoch(record, model)
    model.eval()
    return model, trace


def format_loss_trace(trace: List[EpochRecord]) -> str:
    return "".join(f"{r.epoch}\t{r.mean_loss:.9g}\t{r.lr:g}\n" for r in trace)


def write_loss_trace(trace: List[EpochRecord], path):
    Path(path).write_text(format_loss_trace(trace))
