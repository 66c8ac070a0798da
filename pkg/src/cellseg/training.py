"""Training loop: binary cross-entropy, Adam, fixed epoch budget."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import save_checkpoint
from .errors import ConfigError, NonFiniteLossError, ShapeError
from .imagedata import BatchIterator, SegmentationDataset
from .model import UNetModel, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2
    epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss: str = "bce"
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.checkpoint_every < 0:
            raise ConfigError("epochs and checkpoint_every must be non-negative")
        if self.loss != "bce":
            raise ConfigError(f"unsupported loss {self.loss!r}; only 'bce' is available")


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,seconds"]
        lines += [f"{i + 1},{loss:.9g},{sec:.3f}" for i, (loss, sec) in enumerate(zip(self.losses, self.seconds))]
        return "\n".join(lines) + "\n"


def bce_loss(pred, target, clamp_eps: float = 1e-7) -> float:
    """Mean of ``-[y ln p + (1 - y) ln(1 - p)]`` with ``p`` clamped to ``[eps, 1 - eps]``."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred.astype(np.float64), clamp_eps, 1 - clamp_eps)
    y = target.astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def bce_logit_grad(prob, target):
    """Gradient of mean BCE through the sigmoid w.r.t. the logits: ``(p - y) / N``."""
    return (prob - target) / prob.size


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def train_step(model: UNetModel, optimizer: Adam, images, masks) -> float:
    tape: list = []
    logits = model.logits(images, training=True, tape=tape)
    target = np.ascontiguousarray(masks.transpose(0, 2, 3, 1), dtype=logits.dtype)
    prob = sigmoid(logits)
    loss = bce_loss(prob, target)
    if math.isfinite(loss):
        optimizer.step(model.backward(tape, bce_logit_grad(prob, target)))
    return loss


def train(model: UNetModel, train_ds: SegmentationDataset, cfg: TrainConfig = TrainConfig(), *,
          checkpoint_dir=None, checkpoint_extra: dict | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None):
    """Train a copy of ``model``; returns ``(trained_model, history)``.

    Batches are reshuffled every epoch from ``(cfg.seed, epoch)``. With
    ``checkpoint_dir`` set, ``epoch_XXXX.ckpt`` files are written every
    ``cfg.checkpoint_every`` epochs.
    """
    model = model.copy()
    history = TrainHistory()
    if cfg.epochs == 0 or len(train_ds) == 0:
        return model, history
    batches = BatchIterator(train_ds, cfg.batch_size, shuffle=True, seed=cfg.seed,
                            mask_channels=model.config.out_channels, dtype=model.dtype)
    _, _, channels = batches._shape
    if channels != model.config.in_channels:
        raise ShapeError(f"dataset images have {channels} channels, model expects "
                         f"{model.config.in_channels}")
    opt = Adam(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        losses, sizes = [], []
        for b, (images, masks) in enumerate(batches.batches(epoch)):
            loss = train_step(model, opt, images, masks)
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch + 1, b, loss)
            losses.append(loss)
            sizes.append(len(images))
        mean_loss = float(np.average(losses, weights=sizes))
        elapsed = time.perf_counter() - start
        history.losses.append(mean_loss)
        history.seconds.append(elapsed)
        log.info("epoch %d/%d loss %.6f (%.2fs)", epoch + 1, cfg.epochs, mean_loss, elapsed)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean_loss, elapsed)
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.ckpt", checkpoint_extra)
    return model, history
