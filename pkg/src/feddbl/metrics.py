"""Multiclass evaluation metrics computed from a confusion-matrix tally."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Square count matrix: rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise InvalidInputError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise InvalidInputError("confusion matrix entries must be non-negative")
        c = np.ascontiguousarray(c)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true: np.ndarray, pred: np.ndarray, num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true, dtype=np.int64).reshape(-1)
    p = np.asarray(pred, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise InvalidInputError(f"label arrays differ in length: {t.size} vs {p.size}")
    for name, arr in (("true", t), ("pred", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise InvalidInputError(f"{name} labels fall outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def accuracy(m: ConfusionMatrix) -> float:
    total = m.total
    if total == 0:
        return 0.0
    return float(np.trace(m.counts)) / total


def _precision_recall_f1(m: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    counts = m.counts.astype(np.float64)
    tp = np.diag(counts)
    pred_totals = counts.sum(axis=0)
    true_totals = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_totals > 0, tp / pred_totals, 0.0)
        recall = np.where(true_totals > 0, tp / true_totals, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return precision, recall, f1


def macro_f1(m: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1; a class with no support and no
    predictions contributes 0."""
    _, _, f1 = _precision_recall_f1(m)
    return float(f1.mean())


def micro_f1(m: ConfusionMatrix) -> float:
    """Micro-averaged F1. For single-label multiclass tallies this equals
    accuracy; kept for report consumers that expect the micro convention."""
    total = m.total
    if total == 0:
        return 0.0
    return float(np.trace(m.counts)) / total


def mcc(m: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (the R_K statistic).

    Defined as 0 when either variance factor vanishes (e.g. all predictions
    or all truths in one class), keeping sweep pipelines total.
    """
    counts = m.counts.astype(np.float64)
    total = counts.sum()
    trace = np.trace(counts)
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    cov_tp = total * trace - row @ col
    var_t = total * total - row @ row
    var_p = total * total - col @ col
    if var_t <= 0.0 or var_p <= 0.0:
        logger.warning("mcc degenerate: a marginal is concentrated in one class; returning 0")
        return 0.0
    return float(cov_tp / math.sqrt(var_t * var_p))


def per_class_report(m: ConfusionMatrix) -> list[dict[str, float]]:
    precision, recall, f1 = _precision_recall_f1(m)
    return [
        {"precision": float(p), "recall": float(r), "f1": float(f)}
        for p, r, f in zip(precision, recall, f1)
    ]


def evaluate(true: np.ndarray, pred: np.ndarray, num_classes: int) -> dict:
    """All reported metrics for one prediction run, as a JSON-ready dict."""
    m = confusion(true, pred, num_classes)
    return {
        "accuracy": accuracy(m),
        "macro_f1": macro_f1(m),
        "mcc": mcc(m),
        "per_class": per_class_report(m),
    }
