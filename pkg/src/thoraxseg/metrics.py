"""Crisp (hard-label) segmentation metrics and the metrics table format.

Predictions become labels by per-pixel argmax over class probabilities, with
ties resolving to the lowest class index. Per class, DSC = 2*TP / (2*TP +
FP + FN) and IoU = TP / (TP + FP + FN); a class absent from both maps scores
1.0 by convention (the maps agree there is nothing to find). The headline
number for a (prediction, reference) pair is the mean over the foreground
classes only, since background dominates pixel count without saying anything
about segmentation quality.

The on-disk table is CSV with header ``seed,split,class,dsc,iou`` where
``class`` is a class name or ``foreground`` for the pooled any-organ mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import DataError

CLASS_NAMES = {0: "background", 1: "lung", 2: "heart"}
FOREGROUND_CLASSES = (1, 2)
METRICS_HEADER = ("seed", "split", "class", "dsc", "iou")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def argmax_labels(probs) -> np.ndarray:
    """(N, C, H, W) probabilities to (N, H, W) int labels; ties pick the
    lowest class index."""
    arr = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    if arr.ndim != 4:
        raise DataError(f"argmax_labels expects (N, C, H, W), got shape {arr.shape}")
    return arr.argmax(axis=1)


def confusion_counts(pred: np.ndarray, truth: np.ndarray, cls: int) -> ConfusionCounts:
    if pred.shape != truth.shape:
        raise DataError(f"label map shapes differ: {pred.shape} vs {truth.shape}")
    p = pred == cls
    t = truth == cls
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=pred.size - tp - fp - fn)


def dsc(counts: ConfusionCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else 2.0 * counts.tp / denom


def iou(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else counts.tp / denom


def iou_from_dsc(value: float) -> float:
    return value / (2.0 - value)


def validate_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"label map contains values outside [0, {num_classes - 1}]")


def pair_metrics(pred: np.ndarray, truth: np.ndarray, num_classes: int = 3,
                 foreground: tuple[int, ...] = FOREGROUND_CLASSES) -> dict[str, tuple[float, float]]:
    """Per-class (dsc, iou) for one label-map pair, plus a pooled
    ``foreground`` entry treating all foreground classes as one mask."""
    validate_labels(pred, num_classes)
    validate_labels(truth, num_classes)
    out: dict[str, tuple[float, float]] = {}
    for cls in range(num_classes):
        counts = confusion_counts(pred, truth, cls)
        out[CLASS_NAMES.get(cls, f"class{cls}")] = (dsc(counts), iou(counts))
    pooled_pred = np.isin(pred, foreground).astype(np.int64)
    pooled_truth = np.isin(truth, foreground).astype(np.int64)
    counts = confusion_counts(pooled_pred, pooled_truth, 1)
    out["foreground"] = (dsc(counts), iou(counts))
    return out


def headline(pred: np.ndarray, truth: np.ndarray, num_classes: int = 3,
             foreground: tuple[int, ...] = FOREGROUND_CLASSES) -> tuple[float, float]:
    """Mean (dsc, iou) over the foreground classes of one pair."""
    per_class = pair_metrics(pred, truth, num_classes, foreground)
    names = [CLASS_NAMES[c] for c in foreground]
    mean_dsc = sum(per_class[n][0] for n in names) / len(names)
    mean_iou = sum(per_class[n][1] for n in names) / len(names)
    return mean_dsc, mean_iou


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    split: str
    label: str
    dsc: float
    iou: float


def write_metrics_csv(path: str | Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([row.seed, row.split, row.label,
                             f"{row.dsc:.10f}", f"{row.iou:.10f}"])


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    rows: list[MetricsRow] = []
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise DataError(f"{path}: expected metrics header {','.join(METRICS_HEADER)}, got {header}")
        for lineno, record in enumerate(reader, start=2):
            if len(record) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(record)}")
            try:
                rows.append(MetricsRow(seed=int(record[0]), split=record[1], label=record[2],
                                       dsc=float(record[3]), iou=float(record[4])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparsable metrics row: {exc}") from exc
    return rows


def aggregate_rows(rows: list[MetricsRow]) -> dict[tuple[str, str], tuple[float, float, float, float, int]]:
    """Group by (split, class): mean and sample std of dsc and iou, plus n."""
    groups: dict[tuple[str, str], list[MetricsRow]] = {}
    for row in rows:
        groups.setdefault((row.split, row.label), []).append(row)
    out = {}
    for key, members in sorted(groups.items()):
        d = np.array([m.dsc for m in members])
        i = np.array([m.iou for m in members])
        std_d = float(d.std(ddof=1)) if len(members) > 1 else 0.0
        std_i = float(i.std(ddof=1)) if len(members) > 1 else 0.0
        out[key] = (float(d.mean()), std_d, float(i.mean()), std_i, len(members))
    return out
