"""Dataset manifests, deterministic splits, and sample loading.

A dataset root holds ``images/`` plus ``masks/lung/`` and ``masks/heart/``;
files pair up by stem. The manifest is a CSV (``id,image,lung_mask,
heart_mask``) with paths relative to the manifest's directory, so a dataset
directory can move as a unit.

Splits shuffle the sorted id list with a seeded generator and cut at
floor(n * train_fraction). Fixed-size subsets reuse the same shuffle: the
held-out tail is identical to the fraction split for that seed, and the
training subset is the head of the training pool, so shrinking the budget
never leaks test images into training.

Image and mask sources may differ in resolution; each is resampled to the
target grid independently (bilinear for intensities, nearest for labels).
Where lung and heart masks overlap, heart wins: the heart shadow occludes
the lung field in a frontal radiograph.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .preprocess import (ClaheConfig, RawImage, clahe, normalize_unit,
                         read_image, read_mask, resize_bilinear,
                         resize_nearest, write_pgm, write_png)

MANIFEST_HEADER = ("id", "image", "lung_mask", "heart_mask")
SPLIT_HEADER = ("id", "role")
_IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    image: str
    lung_mask: str
    heart_mask: str


@dataclass(frozen=True)
class Manifest:
    root: Path
    records: tuple[ManifestRecord, ...]

    def ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def record(self, sample_id: str) -> ManifestRecord:
        for r in self.records:
            if r.sample_id == sample_id:
                return r
        raise DataError(f"sample id {sample_id!r} is not in the manifest")

    def __len__(self) -> int:
        return len(self.records)


def _find_by_stem(directory: Path, stem: str) -> Path | None:
    hits = [directory / f"{stem}{s}" for s in _IMAGE_SUFFIXES if (directory / f"{stem}{s}").exists()]
    if len(hits) > 1:
        raise DataError(f"ambiguous files for stem {stem!r} in {directory}")
    return hits[0] if hits else None


def build_manifest(root: str | Path) -> Manifest:
    root = Path(root)
    images = root / "images"
    lungs = root / "masks" / "lung"
    hearts = root / "masks" / "heart"
    for required in (images, lungs, hearts):
        if not required.is_dir():
            raise DataError(f"dataset root {root} is missing directory {required.relative_to(root)}")
    stems: dict[str, Path] = {}
    for path in sorted(images.iterdir()):
        if path.suffix.lower() not in _IMAGE_SUFFIXES:
            continue
        if path.stem in stems:
            raise DataError(f"duplicate image stem {path.stem!r} in {images}")
        stems[path.stem] = path
    if not stems:
        raise DataError(f"no images found under {images}")
    records = []
    for stem in sorted(stems):
        lung = _find_by_stem(lungs, stem)
        heart = _find_by_stem(hearts, stem)
        if lung is None or heart is None:
            missing = "lung" if lung is None else "heart"
            raise DataError(f"sample {stem!r} has no {missing} mask")
        records.append(ManifestRecord(
            sample_id=stem,
            image=str(stems[stem].relative_to(root)),
            lung_mask=str(lung.relative_to(root)),
            heart_mask=str(heart.relative_to(root)),
        ))
    return Manifest(root=root, records=tuple(records))


def write_manifest_csv(path: str | Path, manifest: Manifest) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.sample_id, r.image, r.lung_mask, r.heart_mask])


def read_manifest_csv(path: str | Path) -> Manifest:
    path = Path(path)
    records = []
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise DataError(f"{path}: expected manifest header {','.join(MANIFEST_HEADER)}, got {header}")
        seen = set()
        for lineno, record in enumerate(reader, start=2):
            if len(record) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(record)}")
            if record[0] in seen:
                raise DataError(f"{path}:{lineno}: duplicate sample id {record[0]!r}")
            seen.add(record[0])
            records.append(ManifestRecord(*record))
    return Manifest(root=path.parent, records=tuple(records))


def manifest_checksums(manifest: Manifest) -> dict[str, str]:
    """sha256 of every referenced file, keyed by manifest-relative path."""
    out = {}
    for r in manifest.records:
        for rel in (r.image, r.lung_mask, r.heart_mask):
            target = manifest.root / rel
            if not target.exists():
                raise DataError(f"manifest references missing file {target}")
            out[rel] = hashlib.sha256(target.read_bytes()).hexdigest()
    return out


# -- splits --------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "fraction"
    train_fraction: float = 0.85
    train_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fraction", "fixed_count"):
            raise ConfigError(f"split mode must be 'fraction' or 'fixed_count', got {self.mode!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.mode == "fixed_count" and self.train_count < 1:
            raise ConfigError(f"fixed_count mode needs train_count >= 1, got {self.train_count}")


@dataclass(frozen=True)
class Split:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def split_ids(ids: list[str], spec: SplitSpec) -> Split:
    ordered = sorted(ids)
    if len(set(ordered)) != len(ordered):
        raise DataError("split input contains duplicate ids")
    n = len(ordered)
    n_train = math.floor(n * spec.train_fraction)
    if n_train < 1 or n_train >= n:
        raise DataError(f"dataset of {n} samples cannot support a {spec.train_fraction} train fraction")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    pool = perm[:n_train]
    test = perm[n_train:]
    if spec.mode == "fixed_count":
        if spec.train_count > len(pool):
            raise ConfigError(f"train_count {spec.train_count} exceeds the training pool of {len(pool)}")
        train = pool[:spec.train_count]
    else:
        train = pool
    return Split(
        train_ids=tuple(sorted(ordered[i] for i in train)),
        test_ids=tuple(sorted(ordered[i] for i in test)),
    )


def write_split_csv(path: str | Path, split: Split) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(SPLIT_HEADER)
        for sample_id in split.train_ids:
            writer.writerow([sample_id, "train"])
        for sample_id in split.test_ids:
            writer.writerow([sample_id, "test"])


def read_split_csv(path: str | Path) -> Split:
    train, test = [], []
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or tuple(header) != SPLIT_HEADER:
            raise DataError(f"{path}: expected split header {','.join(SPLIT_HEADER)}, got {header}")
        for lineno, record in enumerate(reader, start=2):
            if len(record) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(record)}")
            sample_id, role = record
            if role == "train":
                train.append(sample_id)
            elif role == "test":
                test.append(sample_id)
            else:
                raise DataError(f"{path}:{lineno}: unknown role {role!r}")
    if not train or not test:
        raise DataError(f"{path}: split needs at least one train and one test id")
    return Split(train_ids=tuple(train), test_ids=tuple(test))


# -- sample loading --------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image: np.ndarray   # (1, H, W) float64 in [0, 1]
    mask: np.ndarray    # (num_classes, H, W) one-hot float64
    labels: np.ndarray  # (H, W) int64


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((num_classes,) + labels.shape)
    for cls in range(num_classes):
        out[cls][labels == cls] = 1.0
    return out


def load_sample(manifest: Manifest, record: ManifestRecord, resolution: int,
                clahe_cfg: ClaheConfig | None) -> Sample:
    img = read_image(manifest.root / record.image)
    img = resize_bilinear(img, (resolution, resolution))
    if clahe_cfg is not None:
        img = clahe(img, clahe_cfg)
    lung = resize_nearest(read_mask(manifest.root / record.lung_mask), (resolution, resolution))
    heart = resize_nearest(read_mask(manifest.root / record.heart_mask), (resolution, resolution))
    labels = np.zeros((resolution, resolution), dtype=np.int64)
    labels[lung > 0] = 1
    labels[heart > 0] = 2
    return Sample(
        sample_id=record.sample_id,
        image=normalize_unit(img),
        mask=one_hot(labels, 3),
        labels=labels,
    )


def load_samples(manifest: Manifest, ids, resolution: int,
                 clahe_cfg: ClaheConfig | None) -> list[Sample]:
    return [load_sample(manifest, manifest.record(i), resolution, clahe_cfg) for i in ids]


# -- synthetic phantoms ------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    count: int = 24
    resolution: int = 128
    seed: int = 0
    bit_depth: int = 8

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"synthetic count must be >= 1, got {self.count}")
        if self.resolution < 16:
            raise ConfigError(f"synthetic resolution must be >= 16, got {self.resolution}")
        if self.bit_depth not in (8, 12, 16):
            raise ConfigError(f"bit_depth must be 8, 12, or 16, got {self.bit_depth}")


def _ellipse(yy, xx, cy, cx, ry, rx, angle):
    """Normalized squared radius; <= 1 is inside."""
    dy = yy - cy
    dx = xx - cx
    ca, sa = math.cos(angle), math.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    return (u / rx) ** 2 + (v / ry) ** 2


def synthesize_sample(resolution: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One chest phantom: float image in [0, 1], lung mask, heart mask.

    Two dark lung ellipses and one bright heart ellipse over a drifting
    background with rib-like banding and noise; the heart deliberately
    overlaps the medial edge of the left lung so the overlap rule gets
    exercised. All geometry jitters per sample.
    """
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64)

    gx = rng.uniform(-0.08, 0.08)
    gy = rng.uniform(-0.08, 0.08)
    image = 0.55 + gx * (xx / r - 0.5) + gy * (yy / r - 0.5)
    ribs = 0.03 * np.sin(2.0 * math.pi * (yy / r) * rng.uniform(6.0, 9.0) + rng.uniform(0.0, 2.0 * math.pi))
    image += ribs

    def jit(center, spread):
        return center + rng.uniform(-spread, spread)

    left = _ellipse(yy, xx, cy=r * jit(0.46, 0.03), cx=r * jit(0.30, 0.02),
                    ry=r * jit(0.27, 0.02), rx=r * jit(0.15, 0.015), angle=jit(0.08, 0.06))
    right = _ellipse(yy, xx, cy=r * jit(0.46, 0.03), cx=r * jit(0.70, 0.02),
                     ry=r * jit(0.27, 0.02), rx=r * jit(0.15, 0.015), angle=jit(-0.08, 0.06))
    heart = _ellipse(yy, xx, cy=r * jit(0.60, 0.025), cx=r * jit(0.56, 0.02),
                     ry=r * jit(0.14, 0.015), rx=r * jit(0.155, 0.015), angle=jit(0.35, 0.08))

    lung_soft = np.clip(1.25 - np.sqrt(np.minimum(left, right)), 0.0, 1.0)
    heart_soft = np.clip(1.25 - np.sqrt(heart), 0.0, 1.0)
    image = image - 0.26 * lung_soft + 0.20 * heart_soft
    image += rng.normal(0.0, 0.02, size=(r, r))

    lung_mask = ((left <= 1.0) | (right <= 1.0)).astype(np.uint8)
    heart_mask = (heart <= 1.0).astype(np.uint8)
    return np.clip(image, 0.0, 1.0), lung_mask, heart_mask


def generate_synthetic(root: str | Path, cfg: SynthConfig) -> Manifest:
    """Materialize a synthetic dataset under `root` and return its manifest.

    Each sample draws from an independent stream seeded by (seed, index),
    so regenerating with a larger count leaves earlier samples untouched.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks" / "lung").mkdir(parents=True, exist_ok=True)
    (root / "masks" / "heart").mkdir(parents=True, exist_ok=True)

    levels = 1 << cfg.bit_depth
    suffix = ".pgm" if cfg.bit_depth == 12 else ".png"
    for index in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, index])
        image, lung, heart = synthesize_sample(cfg.resolution, rng)
        quantized = np.floor(image * (levels - 1) + 0.5).astype(np.uint16)
        raw = RawImage(quantized, cfg.bit_depth)
        sample_id = f"synth{index:04d}"
        if suffix == ".pgm":
            write_pgm(root / "images" / f"{sample_id}.pgm", raw)
        else:
            write_png(root / "images" / f"{sample_id}.png", raw)
        write_png(root / "masks" / "lung" / f"{sample_id}.png", RawImage(lung.astype(np.uint16) * 255, 8))
        write_png(root / "masks" / "heart" / f"{sample_id}.png", RawImage(heart.astype(np.uint16) * 255, 8))

    manifest = build_manifest(root)
    write_manifest_csv(root / "manifest.csv", manifest)
    return manifest
