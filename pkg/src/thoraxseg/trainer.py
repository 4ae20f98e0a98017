"""Training loop: Adam over the focal overlap loss, with curve logging.

Runs are bit-reproducible: the epoch order, mixing weights, and every
parameter update derive from explicit seeds, tensors stay float64, and all
graph traversal is ordered. Training the same configuration twice yields
identical curve files and identical checkpoints.

Small training sets get proportionally more epochs. The reference budget is
50 epochs over the full training pool; reduced sets target a near-constant
number of sample presentations (epochs * set size), pinned at 500 epochs for
20 samples and 1000 for 10.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, no_grad
from .dataset import Sample
from .errors import ConfigError, DataError, NumericalAbort, UsageError
from .losses import LossConfig, focal_tversky_loss
from .metrics import (FOREGROUND_CLASSES, MetricsRow, argmax_labels, headline,
                      pair_metrics)
from .mixup import MixedSample, MixupConfig, mix_pair, pair_epoch, sample_beta
from .model import ModelConfig, ModelParams, forward, init_model, named_params

FULL_EPOCHS = 50
PRESENTATION_BUDGET = 10_000  # 20 samples * 500 epochs = 10 * 1000


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 0  # 0 derives the budget from the training-set size
    batch_size: int = 4
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mixup: MixupConfig = field(default_factory=MixupConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0 (0 means auto), got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.adam_epsilon <= 0.0:
            raise ConfigError(f"adam_epsilon must be positive, got {self.adam_epsilon}")


def default_epochs(train_size: int, full_size: int = 209) -> int:
    """Epoch budget for a training set of `train_size` samples."""
    if train_size < 1:
        raise ConfigError(f"cannot derive an epoch budget for {train_size} samples")
    if train_size >= full_size:
        return FULL_EPOCHS
    return max(FULL_EPOCHS, round(PRESENTATION_BUDGET / train_size))


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_adam(named: list[tuple[str, Tensor]]) -> AdamState:
    return AdamState(
        step=0,
        m={name: np.zeros_like(t.data) for name, t in named},
        v={name: np.zeros_like(t.data) for name, t in named},
    )


def adam_step(named: list[tuple[str, Tensor]], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected update: p -= lr * m_hat / (sqrt(v_hat) + eps).

    Raises NumericalAbort naming the first parameter whose gradient went
    non-finite; the caller adds epoch context.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in named:
        grad = p.grad
        if grad is None:
            grad = np.zeros_like(p.data)
        if not np.all(np.isfinite(grad)):
            norm = float(np.linalg.norm(grad[np.isfinite(grad)]))
            raise NumericalAbort(f"non-finite gradient in {name!r} at update {t} (finite-part norm {norm:.3e})")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (grad * grad)
        p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)


# -- epoch streams ------------------------------------------------------------------


def epoch_stream(samples: list[Sample], epoch: int, cfg: TrainConfig) -> list[MixedSample]:
    """The (possibly mixed) sample sequence for one epoch.

    With mixing on, the order and weights come from the mixup seed stream;
    each element is a convex combination with its cyclic successor. With
    mixing off, the raw sample buffers pass through untouched in an order
    drawn from the trainer seed stream.
    """
    n = len(samples)
    if cfg.mixup.enabled:
        rng = np.random.default_rng([cfg.mixup.seed, epoch])
        pairs = pair_epoch(n, rng)
        stream = []
        for a, b in pairs:
            lam = sample_beta(cfg.mixup.delta, rng)
            stream.append(mix_pair(samples[a].image, samples[a].mask,
                                   samples[b].image, samples[b].mask, lam))
        return stream
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(n)
    return [MixedSample(image=samples[i].image, mask=samples[i].mask, lam=1.0) for i in order]


# -- curves -----------------------------------------------------------------------


CURVES_HEADER = ("epoch", "train_dsc", "train_iou", "val_dsc", "val_iou", "loss")


@dataclass(frozen=True)
class CurveRow:
    epoch: int
    train_dsc: float
    train_iou: float
    val_dsc: float
    val_iou: float
    loss: float


def write_curves_csv(path: str | Path, rows: list[CurveRow]) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(CURVES_HEADER)
        for r in rows:
            writer.writerow([r.epoch] + [f"{v:.17g}" for v in
                                         (r.train_dsc, r.train_iou, r.val_dsc, r.val_iou, r.loss)])


def read_curves_csv(path: str | Path) -> list[CurveRow]:
    rows = []
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or tuple(header) != CURVES_HEADER:
            raise DataError(f"{path}: expected curves header {','.join(CURVES_HEADER)}, got {header}")
        for lineno, record in enumerate(reader, start=2):
            if len(record) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(record)}")
            try:
                rows.append(CurveRow(int(record[0]), *(float(v) for v in record[1:])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparsable curve row: {exc}") from exc
    return rows


# -- evaluation ----------------------------------------------------------------------


def predict_labels(params: ModelParams, samples: list[Sample], batch_size: int = 4) -> np.ndarray:
    """Hard label maps (len(samples), H, W) from an eval-mode forward pass."""
    if not samples:
        raise UsageError("predict_labels needs at least one sample")
    outputs = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            x = Tensor(np.stack([s.image for s in chunk]))
            probs = forward(params, x, training=False)
            outputs.append(argmax_labels(probs))
    return np.concatenate(outputs, axis=0)


def evaluate_headline(params: ModelParams, samples: list[Sample], batch_size: int = 4) -> tuple[float, float]:
    """Mean foreground (dsc, iou) over the samples."""
    preds = predict_labels(params, samples, batch_size)
    scores = [headline(preds[i], s.labels) for i, s in enumerate(samples)]
    mean_dsc = sum(s[0] for s in scores) / len(scores)
    mean_iou = sum(s[1] for s in scores) / len(scores)
    return mean_dsc, mean_iou


def metrics_rows(params: ModelParams, samples: list[Sample], seed: int, split_name: str,
                 batch_size: int = 4) -> list[MetricsRow]:
    """One row per class (plus pooled foreground): per-image metrics averaged
    over the samples."""
    preds = predict_labels(params, samples, batch_size)
    per_image = [pair_metrics(preds[i], s.labels) for i, s in enumerate(samples)]
    rows = []
    for label in list(per_image[0]):
        mean_dsc = sum(m[label][0] for m in per_image) / len(per_image)
        mean_iou = sum(m[label][1] for m in per_image) / len(per_image)
        rows.append(MetricsRow(seed=seed, split=split_name, label=label,
                               dsc=mean_dsc, iou=mean_iou))
    return rows


# -- the loop ------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    curves: list[CurveRow]
    epochs: int


def train_model(train_samples: list[Sample], val_samples: list[Sample],
                model_cfg: ModelConfig, cfg: TrainConfig,
                progress=None) -> TrainResult:
    """Train from scratch and return final parameters plus per-epoch curves.

    `val_samples` may be empty; validation columns are then NaN. `progress`,
    if given, receives each CurveRow as it is produced.
    """
    if not train_samples:
        raise DataError("training set is empty")
    if cfg.mixup.enabled and len(train_samples) < 2:
        raise ConfigError("mixup needs at least 2 training samples; disable it or add data")
    epochs = cfg.epochs if cfg.epochs > 0 else default_epochs(len(train_samples))

    params = init_model(model_cfg, cfg.seed)
    named = list(named_params(params))
    state = init_adam(named)
    curves: list[CurveRow] = []

    for epoch in range(epochs):
        stream = epoch_stream(train_samples, epoch, cfg)
        epoch_losses = []
        for start in range(0, len(stream), cfg.batch_size):
            batch = stream[start:start + cfg.batch_size]
            x = Tensor(np.stack([item.image for item in batch]))
            g = Tensor(np.stack([item.mask for item in batch]))
            probs = forward(params, x, training=True)
            loss = focal_tversky_loss(probs, g, cfg.loss)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise NumericalAbort(f"non-finite loss {loss_value} at epoch {epoch + 1}")
            for _, p in named:
                p.zero_grad()
            loss.backward()
            try:
                adam_step(named, state, cfg)
            except NumericalAbort as exc:
                raise NumericalAbort(f"epoch {epoch + 1}: {exc}") from exc
            epoch_losses.append(loss_value)

        train_dsc, train_iou = evaluate_headline(params, train_samples, cfg.batch_size)
        if val_samples:
            val_dsc, val_iou = evaluate_headline(params, val_samples, cfg.batch_size)
        else:
            val_dsc = val_iou = float("nan")
        row = CurveRow(
            epoch=epoch + 1,
            train_dsc=train_dsc,
            train_iou=train_iou,
            val_dsc=val_dsc,
            val_iou=val_iou,
            loss=sum(epoch_losses) / len(epoch_losses),
        )
        curves.append(row)
        if progress is not None:
            progress(row)

    return TrainResult(params=params, curves=curves, epochs=epochs)
