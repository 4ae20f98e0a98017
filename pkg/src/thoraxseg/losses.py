"""Soft overlap losses over per-class probability maps.

All losses consume predicted probabilities p and reference masks g of shape
(N, C, H, W) with p in [0, 1]; g is normally one-hot but any values in
[0, 1] are legal (mixing produces soft references). Sums run over every
pixel of the batch, so a loss value does not change meaning with batch size.

Per class c with smoothing epsilon:

  soft overlap score  (sum p*g + eps) / (sum p + sum g + eps)
  index(alpha, beta)  (sum p*g + eps) / (sum p*g + alpha*sum (1-p)*g + beta*sum p*(1-g) + eps)

alpha weighs missed reference pixels, beta weighs false detections. The
focal variant raises each class deficit to the power gamma_inv in (0, 1],
which amplifies gradients from classes that are still poorly overlapped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, take_channel
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.6
    beta: float = 0.4
    gamma_inv: float = 0.675
    epsilon: float = 1e-6
    class_set: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.alpha <= 0.0 or self.beta <= 0.0:
            raise ConfigError(f"alpha and beta must be positive, got alpha={self.alpha} beta={self.beta}")
        if not (1.0 / 3.0 <= self.gamma_inv <= 1.0):
            raise ConfigError(f"gamma_inv must lie in [1/3, 1], got {self.gamma_inv}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.class_set:
            raise ConfigError("class_set must name at least one class")
        if any(c < 0 for c in self.class_set):
            raise ConfigError(f"class_set indices must be non-negative, got {self.class_set}")


def _pair(p: Tensor, g) -> tuple[Tensor, Tensor]:
    if not isinstance(g, Tensor):
        g = Tensor(np.asarray(g, dtype=np.float64))
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} does not match reference shape {g.shape}")
    if p.ndim != 4:
        raise ShapeError(f"losses expect (N, C, H, W) tensors, got shape {p.shape}")
    return p, g


def soft_dice(p: Tensor, g, cls: int, epsilon: float = 1e-6) -> Tensor:
    """Soft overlap score for one class channel. No factor 2 on the
    intersection: identical binary maps score about 0.5, and only the
    all-empty case reaches 1 (through the smoothing terms)."""
    p, g = _pair(p, g)
    pc = take_channel(p, cls)
    gc = take_channel(g, cls)
    inter = (pc * gc).sum()
    return (inter + epsilon) / (pc.sum() + gc.sum() + epsilon)


def tversky_index(p: Tensor, g, cls: int, cfg: LossConfig) -> Tensor:
    p, g = _pair(p, g)
    pc = take_channel(p, cls)
    gc = take_channel(g, cls)
    tp = (pc * gc).sum()
    fn = ((1.0 - pc) * gc).sum()
    fp = (pc * (1.0 - gc)).sum()
    return (tp + cfg.epsilon) / (tp + cfg.alpha * fn + cfg.beta * fp + cfg.epsilon)


def dice_loss(p: Tensor, g, cfg: LossConfig) -> Tensor:
    p, g = _pair(p, g)
    total = None
    for cls in cfg.class_set:
        term = 1.0 - soft_dice(p, g, cls, cfg.epsilon)
        total = term if total is None else total + term
    return total


def tversky_loss(p: Tensor, g, cfg: LossConfig) -> Tensor:
    p, g = _pair(p, g)
    total = None
    for cls in cfg.class_set:
        term = 1.0 - tversky_index(p, g, cls, cfg)
        total = term if total is None else total + term
    return total


def focal_tversky_loss(p: Tensor, g, cfg: LossConfig) -> Tensor:
    p, g = _pair(p, g)
    total = None
    for cls in cfg.class_set:
        term = (1.0 - tversky_index(p, g, cls, cfg)) ** cfg.gamma_inv
        total = term if total is None else total + term
    return total
