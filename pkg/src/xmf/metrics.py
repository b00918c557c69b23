"""Confusion matrices, per-class and macro-averaged metrics, and the
two-sample Z-test used to compare per-seed score samples.

Per-class metrics are one-vs-rest.  Whenever a denominator is zero the
metric is defined as 0, which keeps reports well-defined on tiny test cells.
The normal tail in ``two_sample_z`` uses ``math.erfc``, which is accurate to
well below 1e-12 in absolute terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError

N_CLASSES = 3


@dataclass
class ConfusionMatrix:
    """3x3 counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_CLASSES, N_CLASSES):
            raise DataError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion matrix counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def tally(truths, preds) -> ConfusionMatrix:
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    if truths.shape != preds.shape:
        raise DataError(f"length mismatch: {truths.size} truths vs {preds.size} predictions")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    if truths.size:
        if truths.min() < 0 or truths.max() >= N_CLASSES or preds.min() < 0 or preds.max() >= N_CLASSES:
            raise DataError(f"class indices must lie in [0, {N_CLASSES})")
        np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def class_metrics(cm: ConfusionMatrix, c: int) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) for class ``c``, one-vs-rest."""
    if not 0 <= c < N_CLASSES:
        raise DataError(f"class index {c} out of range")
    counts = cm.counts
    tp = counts[c, c]
    fn = counts[c, :].sum() - tp
    fp = counts[:, c].sum() - tp
    tn = counts.sum() - tp - fn - fp
    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return float(accuracy), float(precision), float(recall), float(f1)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Arithmetic mean of the per-class F1 scores."""
    return float(np.mean([class_metrics(cm, c)[3] for c in range(N_CLASSES)]))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    return float(np.trace(cm.counts) / cm.total) if cm.total else 0.0


def summarize(cm: ConfusionMatrix) -> dict[str, float]:
    """Overall accuracy plus macro-averaged precision, recall, and F1."""
    per_class = [class_metrics(cm, c) for c in range(N_CLASSES)]
    return {
        "accuracy": overall_accuracy(cm),
        "precision": float(np.mean([m[1] for m in per_class])),
        "recall": float(np.mean([m[2] for m in per_class])),
        "f1": float(np.mean([m[3] for m in per_class])),
    }


def two_sample_z(scores_a, scores_b) -> tuple[float, float]:
    """Two-sided two-sample Z-test on the means of two score samples.

    Uses sample variances (n-1 denominator).  Returns ``(z, p)``; identical
    samples give ``(0.0, 1.0)``.  Raises ``DegenerateInputError`` when either
    sample has fewer than two points or both variances are zero.
    """
    a = np.asarray(scores_a, dtype=np.float64).reshape(-1)
    b = np.asarray(scores_b, dtype=np.float64).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise DegenerateInputError(f"need >= 2 scores per sample, got {a.size} and {b.size}")
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    denom = math.sqrt(var_a / a.size + var_b / b.size)
    if denom == 0.0:
        raise DegenerateInputError("zero pooled variance; Z statistic undefined")
    z = (a.mean() - b.mean()) / denom
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return float(z), float(p)
