"""Classification metrics: confusion matrices, the multiclass correlation
coefficient, macro-averaged scores, and multi-seed aggregation with
confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

METRIC_NAMES = ("accuracy", "f1", "precision", "recall", "mcc")


def confusion_matrix(
    y_true: Sequence[int], y_pred: Sequence[int], n_classes: int = 5
) -> np.ndarray:
    """Counts with true labels on rows and predictions on columns."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays must have the same length")
    if y_true.size == 0:
        raise ValueError("cannot build a confusion matrix from zero samples")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(
                f"{name} labels must lie in [0, {n_classes}), "
                f"got [{arr.min()}, {arr.max()}]"
            )
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


def accuracy_from_confusion(confusion: np.ndarray) -> float:
    total = confusion.sum()
    return float(np.trace(confusion) / total) if total else 0.0


def per_class_precision_recall_f1(
    confusion: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class scores with the 0-on-empty-denominator convention."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / np.where(pr > 0, pr, 1), 0.0)
    return precision, recall, f1


def macro_scores(confusion: np.ndarray) -> tuple[float, float, float]:
    precision, recall, f1 = per_class_precision_recall_f1(confusion)
    return float(precision.mean()), float(recall.mean()), float(f1.mean())


def micro_f1(confusion: np.ndarray) -> float:
    """Micro-averaged F1. In single-label classification every false
    positive is also a false negative, so this always equals accuracy;
    kept as an independent consistency probe on the metric suite."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.trace(confusion)
    fp = confusion.sum() - tp
    fn = fp
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def mcc_multiclass(confusion: np.ndarray) -> float:
    """Generalized K-class correlation coefficient.

    (c*s - sum_k p_k t_k) / sqrt((s^2 - sum p^2)(s^2 - sum t^2)) where c
    is the trace, s the total, p the per-class prediction totals and t
    the per-class truth totals. Either variance term at zero (all of one
    class predicted, or present) gives 0 by convention."""
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.sum() < 1:
        raise ValueError("confusion matrix must contain at least one sample")
    c = np.trace(confusion)
    s = confusion.sum()
    p = confusion.sum(axis=0)
    t = confusion.sum(axis=1)
    numerator = c * s - float(p @ t)
    var_pred = s * s - float(p @ p)
    var_true = s * s - float(t @ t)
    if var_pred <= 0 or var_true <= 0:
        return 0.0
    return float(numerator / math.sqrt(var_pred * var_true))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    precision: float
    recall: float
    mcc: float
    confusion: np.ndarray
    seed: Optional[int] = None

    def value(self, metric: str) -> float:
        if metric not in METRIC_NAMES:
            raise KeyError(f"unknown metric {metric!r}")
        return getattr(self, metric)


def compute_report(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    n_classes: int = 5,
    seed: Optional[int] = None,
) -> MetricsReport:
    matrix = confusion_matrix(y_true, y_pred, n_classes)
    precision, recall, f1 = macro_scores(matrix)
    return MetricsReport(
        accuracy=accuracy_from_confusion(matrix),
        f1=f1,
        precision=precision,
        recall=recall,
        mcc=mcc_multiclass(matrix),
        confusion=matrix,
        seed=seed,
    )


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class AggregatedReport:
    metrics: dict[str, MetricSummary]
    seeds: tuple
    z: float
    n: int


def aggregate_seeds(
    reports: Sequence[MetricsReport],
    z: float = 1.96,
    n_override: Optional[int] = None,
) -> AggregatedReport:
    """Mean, sample std, and mean +/- z*std/sqrt(n) per metric.

    n defaults to the report count; n_override exists because published
    interval tables do not always use the stated number of repeats, and
    reproducing them requires pinning n independently."""
    if len(reports) < 2:
        raise ValueError("need at least 2 reports to aggregate")
    n = n_override if n_override is not None else len(reports)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    summaries = {}
    for metric in METRIC_NAMES:
        values = np.array([r.value(metric) for r in reports], dtype=np.float64)
        mean = float(values.mean())
        std = float(values.std(ddof=1))
        half_width = z * std / math.sqrt(n)
        summaries[metric] = MetricSummary(
            mean=mean, std=std, ci_low=mean - half_width, ci_high=mean + half_width
        )
    return AggregatedReport(
        metrics=summaries,
        seeds=tuple(r.seed for r in reports),
        z=z,
        n=n,
    )
