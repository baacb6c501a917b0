"""Per-image, per-class segmentation metrics and dataset-level aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core_types import FOREGROUND, N_CLASSES
from .rasterize import ContourSet, extract_contour

__all__ = [
    "METRICS",
    "OVERLAP_METRICS",
    "DEFAULT_SPACING",
    "ConfusionCounts",
    "MetricRecord",
    "Summary",
    "confusion",
    "precision",
    "recall",
    "accuracy",
    "dice",
    "iou",
    "directed_hausdorff",
    "hausdorff_avg",
    "evaluate_pair",
    "aggregate",
    "record_from_row",
]

OVERLAP_METRICS = ("precision", "recall", "accuracy", "dice", "iou")
METRICS = OVERLAP_METRICS + ("hausdorff",)
DISPLAY = {
    "precision": "Precision",
    "recall": "Recall",
    "accuracy": "Accuracy",
    "dice": "Dice",
    "iou": "IoU",
    "hausdorff": "Hausdorff",
}
DEFAULT_SPACING = 1e-4  # metres per pixel, used when a sidecar has none
VACUOUS = 1.0


@dataclass(frozen=True)
class ConfusionCounts:
    """One-vs-rest pixel counts; each array has one entry per class."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])

    def absent_in_both(self, cls: int) -> bool:
        return self.tp[cls] + self.fp[cls] + self.fn[cls] == 0


def confusion(pred: np.ndarray, gt: np.ndarray, n_classes: int = N_CLASSES) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    cm = np.bincount(
        gt.ravel().astype(np.int64) * n_classes + pred.ravel().astype(np.int64),
        minlength=n_classes * n_classes,
    ).reshape(n_classes, n_classes)
    tp = np.diag(cm).copy()
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num, den, counts: ConfusionCounts, cls: int) -> float:
    if den == 0:
        # 0/0: vacuous agreement when the class is absent from both maps
        return VACUOUS if counts.absent_in_both(cls) else 0.0
    return num / den


def precision(counts: ConfusionCounts, cls: int) -> float:
    return _ratio(int(counts.tp[cls]), int(counts.tp[cls] + counts.fp[cls]), counts, cls)


def recall(counts: ConfusionCounts, cls: int) -> float:
    return _ratio(int(counts.tp[cls]), int(counts.tp[cls] + counts.fn[cls]), counts, cls)


def accuracy(counts: ConfusionCounts, cls: int) -> float:
    return int(counts.tp[cls] + counts.tn[cls]) / counts.total


def dice(counts: ConfusionCounts, cls: int) -> float:
    tp, fp, fn = int(counts.tp[cls]), int(counts.fp[cls]), int(counts.fn[cls])
    return _ratio(2 * tp, 2 * tp + fp + fn, counts, cls)


def iou(counts: ConfusionCounts, cls: int) -> float:
    tp, fp, fn = int(counts.tp[cls]), int(counts.fp[cls]), int(counts.fn[cls])
    return _ratio(tp, tp + fp + fn, counts, cls)


_OVERLAP_FNS = {"precision": precision, "recall": recall, "accuracy": accuracy, "dice": dice, "iou": iou}


def _points(c) -> np.ndarray:
    pts = c.points if isinstance(c, ContourSet) else np.asarray(c)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def directed_hausdorff(a, b) -> float:
    """max over a of the distance to the nearest point of b, in pixels."""
    pa, pb = _points(a), _points(b)
    d, _ = cKDTree(pb).query(pa, k=1)
    return float(d.max())


def hausdorff_avg(pred_contour, gt_contour, spacing: float) -> float | None:
    """Mean of the two one-sided Hausdorff distances, in metres.

    Returns ``None`` when either contour is empty; no finite value would be
    faithful in that case.
    """
    if not spacing > 0:
        raise ValueError(f"pixel spacing must be positive, got {spacing}")
    pa, pb = _points(pred_contour), _points(gt_contour)
    if len(pa) == 0 or len(pb) == 0:
        return None
    return (directed_hausdorff(pa, pb) + directed_hausdorff(pb, pa)) / 2 * spacing


@dataclass
class MetricRecord:
    """Metrics of one image; ``values[metric]`` has one entry per class, NaN if undefined."""

    image_id: str
    values: dict[str, np.ndarray]
    vacuous: np.ndarray  # class absent from both prediction and ground truth
    spacing: float = DEFAULT_SPACING
    spacing_assumed: bool = False
    method: str = ""

    def value(self, metric: str, cls: int) -> float:
        return float(self.values[metric][cls])

    def defined(self, metric: str, cls: int) -> bool:
        return not (self.vacuous[cls] or math.isnan(self.values[metric][cls]))

    def foreground_mean(self, metric: str) -> float:
        vals = [self.values[metric][c] for c in FOREGROUND if self.defined(metric, c)]
        return float(np.mean(vals)) if vals else math.nan


def evaluate_pair(
    pred: np.ndarray,
    gt: np.ndarray,
    *,
    image_id: str = "",
    spacing: float | None = None,
    method: str = "",
    default_spacing: float = DEFAULT_SPACING,
) -> MetricRecord:
    """All six metrics for every class; missing ``spacing`` falls back to ``default_spacing``."""
    counts = confusion(pred, gt)
    values = {m: np.full(N_CLASSES, math.nan) for m in METRICS}
    for c in range(N_CLASSES):
        for m, fn in _OVERLAP_FNS.items():
            values[m][c] = fn(counts, c)
    assumed = spacing is None
    sp = float(default_spacing) if assumed else float(spacing)
    for c in range(N_CLASSES):
        h = hausdorff_avg(extract_contour(pred, c), extract_contour(gt, c), sp)
        values["hausdorff"][c] = math.nan if h is None else h
    vacuous = np.array([counts.absent_in_both(c) for c in range(N_CLASSES)])
    return MetricRecord(image_id, values, vacuous, sp, assumed, method)


@dataclass
class Summary:
    """Dataset-level table: ``table[metric][cls]`` plus the foreground ``mean`` column."""

    method: str
    n_images: int
    table: dict[str, dict[int, float]]
    mean: dict[str, float]
    excluded: dict[str, dict[int, int]] = field(default_factory=dict)

    def row(self, metric: str) -> list[float]:
        return [self.table[metric][c] for c in FOREGROUND] + [self.mean[metric]]


def aggregate(records: Sequence[MetricRecord], method: str | None = None) -> Summary:
    """Per-class means over images, skipping undefined entries.

    The ``mean`` column is the arithmetic mean of the four structure
    columns, not a pooled mean over every image and class.
    """
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    metrics = list(records[0].values)
    table: dict[str, dict[int, float]] = {}
    excluded: dict[str, dict[int, int]] = {}
    means: dict[str, float] = {}
    for m in metrics:
        table[m], excluded[m] = {}, {}
        for c in range(N_CLASSES):
            vals = [r.value(m, c) for r in records if r.defined(m, c)]
            excluded[m][c] = len(records) - len(vals)
            table[m][c] = math.fsum(vals) / len(vals) if vals else math.nan
        fg = [table[m][c] for c in FOREGROUND if not math.isnan(table[m][c])]
        means[m] = math.fsum(fg) / len(fg) if fg else math.nan
    name = method if method is not None else (records[0].method or "")
    return Summary(name, len(records), table, means, excluded)


def record_from_row(metric_values: dict[str, Sequence[float]], image_id: str = "", method: str = "") -> MetricRecord:
    """Build a record from per-structure values (nipple, pectoral, fib, fat) per metric."""
    values = {}
    for m, vals in metric_values.items():
        arr = np.full(N_CLASSES, math.nan)
        arr[[int(c) for c in FOREGROUND]] = vals
        values[m] = arr
    vacuous = np.zeros(N_CLASSES, dtype=bool)
    return MetricRecord(image_id, values, vacuous, method=method)
