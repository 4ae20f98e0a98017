"""Convex-combination augmentation over sample pairs.

Mixing weights are Beta(delta, delta) draws sampled by Joehnk's algorithm:
draw U, V uniform, set X = U^(1/delta), Y = V^(1/delta), accept when
0 < X + Y <= 1, and return X / (X + Y). The acceptance test is exact; the
strict lower bound rejects the (measure-zero, underflow-induced) case where
both powers flush to zero. Acceptance probability is
Gamma(1+delta)^2 / Gamma(1+2*delta), which stays above 0.9 for delta < 1,
so the sampler suits small shape parameters; it is correct but slow for
large ones.

Pairing consumes a permutation from the caller's generator and mixes each
element with its cyclic successor, so every sample appears exactly twice per
epoch: once as the dominant element and once as the partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class MixupConfig:
    enabled: bool = True
    delta: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ConfigError(f"mixup delta must be positive, got {self.delta}")


def sample_beta(delta: float, rng: np.random.Generator) -> float:
    if delta <= 0.0:
        raise ConfigError(f"beta shape must be positive, got {delta}")
    inv = 1.0 / delta
    while True:
        x = rng.random() ** inv
        y = rng.random() ** inv
        s = x + y
        if 0.0 < s <= 1.0:
            return x / s


def pair_epoch(count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """A permutation of range(count) paired with its cyclic successor."""
    if count < 2:
        raise ConfigError(f"mixup pairing needs at least 2 samples, got {count}")
    perm = rng.permutation(count)
    return [(int(perm[k]), int(perm[(k + 1) % count])) for k in range(count)]


@dataclass(frozen=True)
class MixedSample:
    image: np.ndarray
    mask: np.ndarray
    lam: float


def mix_pair(image_a: np.ndarray, mask_a: np.ndarray,
             image_b: np.ndarray, mask_b: np.ndarray, lam: float) -> MixedSample:
    """lam * a + (1 - lam) * b on image and mask alike.

    lam = 1.0 reproduces sample a bitwise (1.0 * x + 0.0 * y is exact for
    finite non-negative buffers), so the augmentation vanishes cleanly at
    the endpoint.
    """
    if image_a.shape != image_b.shape:
        raise ShapeError(f"mixup images must share a shape: {image_a.shape} vs {image_b.shape}")
    if mask_a.shape != mask_b.shape:
        raise ShapeError(f"mixup masks must share a shape: {mask_a.shape} vs {mask_b.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixing weight must lie in [0, 1], got {lam}")
    image = lam * image_a + (1.0 - lam) * image_b
    mask = lam * mask_a + (1.0 - lam) * mask_b
    return MixedSample(image=image, mask=mask, lam=lam)
