"""Deterministic AdamW training with per-epoch validation tracking.

One call to :func:`train` is a single logical writer over the parameters:
pixels are encoded to token matrices once up front, shuffled with a per-epoch
seeded generator, and the best-validation-epoch parameter snapshot is
retained. Identical inputs and seeds reproduce bit-identical checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import numeric as num
from .dataset import AnnotationMask, ImageTimeSeries, PixelIndex
from .errors import ConfigError, DataError, TrainingError
from .model import ModelParams, forward_batch, init, prepare_inputs
from .sampler import SamplerConfig, extract
from .tokenizer import tokenize

if TYPE_CHECKING:
    from .design import DesignPoint


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 3e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


@dataclass
class AdamWState:
    """First/second moment estimates per parameter plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamWState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    wall_time_s: float = 0.0

    def to_json(self) -> dict:
        return {"train_loss": self.train_loss, "val_accuracy": self.val_accuracy,
                "best_epoch": self.best_epoch,
                "best_val_accuracy": self.best_val_accuracy,
                "wall_time_s": self.wall_time_s}


def adamw_step(params: ModelParams, grads: dict[str, np.ndarray],
               state: AdamWState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place.

    m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2, bias-corrected, then
    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
    """
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match "
                              f"parameter '{name}' {p.data.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter '{name}'")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
                                    + cfg.weight_decay * p.data)


def encode_pixels(series: ImageTimeSeries, mask: AnnotationMask,
                  pixels: list[PixelIndex], sampler_cfg: SamplerConfig,
                  tokenization: str) -> tuple[np.ndarray, np.ndarray]:
    """Token matrices and labels for a pixel population.

    Returns (X, y) with X of shape (P, N, D_in) already scaled to [0, 1].
    """
    if not pixels:
        raise DataError("cannot encode an empty pixel list")
    stacks = []
    labels = np.empty(len(pixels), dtype=np.int64)
    for i, p in enumerate(pixels):
        seq = tokenize(extract(p, series, mask, sampler_cfg), tokenization)
        stacks.append(seq.tokens)
        labels[i] = p.label
    tokens = prepare_inputs(np.stack(stacks), sampler_cfg.normalization)
    return tokens, labels


def predict_batch(params: ModelParams, tokens: np.ndarray,
                  batch_size: int = 512) -> np.ndarray:
    """Eval-mode argmax predictions for a (P, N, D_in) token array."""
    preds = np.empty(tokens.shape[0], dtype=np.int64)
    with num.no_grad():
        for start in range(0, tokens.shape[0], batch_size):
            logits = forward_batch(params, tokens[start:start + batch_size],
                                   training=False)
            preds[start:start + batch_size] = np.argmax(logits.data, axis=1)
    return preds


def evaluate_accuracy(params: ModelParams, tokens: np.ndarray,
                      labels: np.ndarray, batch_size: int = 512) -> float:
    preds = predict_batch(params, tokens, batch_size)
    return float((preds == labels).mean())


def train(series: ImageTimeSeries, mask: AnnotationMask,
          train_pixels: list[PixelIndex], val_pixels: list[PixelIndex],
          design: "DesignPoint", cfg: TrainConfig | None = None,
          ) -> tuple[ModelParams, TrainReport]:
    """Optimize a model for one design point; returns the best checkpoint.

    Epoch loop: seeded shuffle, batched forward in training mode,
    cross-entropy, backward, AdamW step; then eval-mode validation accuracy.
    The snapshot with the highest validation accuracy (earliest epoch on
    ties) is returned. Raises :class:`TrainingError` with epoch/batch context
    on any non-finite loss or gradient.
    """
    cfg = cfg or design.to_train_config()
    cfg.validate()
    if not train_pixels or not val_pixels:
        raise DataError("train and validation pixel sets must be nonempty")

    started = time.perf_counter()
    sampler_cfg = design.to_sampler_config()
    x_train, y_train = encode_pixels(series, mask, train_pixels, sampler_cfg,
                                     design.tokenization)
    x_val, y_val = encode_pixels(series, mask, val_pixels, sampler_cfg,
                                 design.tokenization)
    n, num_tokens, token_dim = x_train.shape
    model_cfg = design.to_model_config(num_classes=mask.num_classes,
                                       num_tokens=num_tokens, token_dim=token_dim)
    params = init(model_cfg, seed=cfg.seed)
    state = AdamWState.zeros_like(params)
    dropout_rng = np.random.default_rng([cfg.seed, 0xD0])

    report = TrainReport()
    best = params.copy()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 0x5E, epoch]).permutation(n)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            logits = forward_batch(params, x_train[idx], training=True,
                                   rng=dropout_rng)
            loss = num.cross_entropy(logits, y_train[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {batch_index}")
            params.zero_grads()
            num.backward(loss)
            grads = {name: p.grad for name, p in params.items()}
            try:
                adamw_step(params, grads, state, cfg)
            except TrainingError as exc:
                raise TrainingError(
                    f"{exc} (epoch {epoch}, batch {batch_index})") from exc
            epoch_loss += loss.item() * len(idx)
            del logits, loss, grads  # free the graph before the next forward
        report.train_loss.append(epoch_loss / n)

        val_acc = evaluate_accuracy(params, x_val, y_val)
        report.val_accuracy.append(val_acc)
        if report.best_val_accuracy is None or val_acc > report.best_val_accuracy:
            report.best_val_accuracy = val_acc
            report.best_epoch = epoch
            best = params.copy()

    report.wall_time_s = time.perf_counter() - started
    return best, report
