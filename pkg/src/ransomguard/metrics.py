"""Confusion-matrix metrics, ROC curves and cross-fold aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Rates:
    precision: float
    recall: float
    accuracy: float
    precision_degenerate: bool = False
    recall_degenerate: bool = False


def confusion(y_true, y_pred) -> ConfusionCounts:
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if t.shape != p.shape:
        raise MetricError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise MetricError("empty input")
    return ConfusionCounts(
        tp=int(np.count_nonzero(t & p)),
        fp=int(np.count_nonzero(~t & p)),
        tn=int(np.count_nonzero(~t & ~p)),
        fn=int(np.count_nonzero(t & ~p)),
    )


def precision_recall_accuracy(c: ConfusionCounts) -> Rates:
    """Precision, recall and accuracy. A zero denominator yields 0.0 and sets its flag."""
    pp = c.tp + c.fp
    ap = c.tp + c.fn
    precision = c.tp / pp if pp else 0.0
    recall = c.tp / ap if ap else 0.0
    accuracy = (c.tp + c.tn) / c.total if c.total else 0.0
    return Rates(precision, recall, accuracy, pp == 0, ap == 0)


def f_beta(precision: float, recall: float, beta: float = 1.0) -> float:
    if beta <= 0:
        raise MetricError("beta must be positive")
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + b2) * precision * recall / denom


@dataclass(frozen=True)
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def trapezoid_auc(fpr, tpr) -> float:
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_curve(y_true, scores) -> ROCCurve:
    """ROC from a descending sweep over distinct score values.

    Tied scores move together in a single step. The curve starts at (0, 0)
    with threshold +inf and ends at (1, 1); AUC uses the trapezoidal rule.
    """
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise MetricError(f"length mismatch: {y.shape} vs {s.shape}")
    n_pos = int(np.count_nonzero(y))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s_sorted)), y.size - 1]
    tps = np.cumsum(y_sorted)[last_of_run]
    fps = (last_of_run + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s_sorted[last_of_run]]
    return ROCCurve(fpr, tpr, thresholds, trapezoid_auc(fpr, tpr))


def mann_whitney_auc(y_true, scores) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    return float((np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0))
                 / (pos.size * neg.size))


FPR_GRID = np.linspace(0.0, 1.0, 101)


def _interp_tpr(curve: ROCCurve, grid: np.ndarray) -> np.ndarray:
    # collapse vertical runs onto their top point so np.interp sees increasing x
    fpr, tpr = curve.fpr, curve.tpr
    last = np.r_[np.flatnonzero(np.diff(fpr) > 0), fpr.size - 1]
    out = np.interp(grid, fpr[last], tpr[last])
    out[grid == 0.0] = 0.0
    return out


def mean_roc(curves) -> ROCCurve:
    """Vertical average on a 101-point FPR grid; AUC is the mean of member AUCs."""
    curves = list(curves)
    if not curves:
        raise MetricError("no curves to average")
    tpr = np.mean([_interp_tpr(c, FPR_GRID) for c in curves], axis=0)
    tpr[-1] = 1.0
    return ROCCurve(FPR_GRID.copy(), tpr, np.full(FPR_GRID.size, np.nan),
                    float(np.mean([c.auc for c in curves])))


def aggregate_folds(per_fold) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (ddof=1) of each metric across folds.

    ``per_fold`` is a sequence of ``{metric: value}`` dicts.
    """
    per_fold = list(per_fold)
    if len(per_fold) < 2:
        raise MetricError("aggregation needs at least 2 folds")
    out = {}
    for key in per_fold[0]:
        v = np.array([f[key] for f in per_fold], dtype=np.float64)
        out[key] = (float(v.mean()), float(v.std(ddof=1)))
    return out


def write_roc_csv(curve: ROCCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in curve.points():
            w.writerow([repr(f), repr(t), repr(th)])


def read_roc_csv(path) -> ROCCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["fpr", "tpr", "threshold"]:
        raise MetricError(f"{path}: expected header fpr,tpr,threshold")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise MetricError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 3:
        raise MetricError(f"{path}: need at least two 3-field rows")
    fpr, tpr = data[:, 0], data[:, 1]
    if not (np.isfinite(fpr).all() and np.isfinite(tpr).all()):
        raise MetricError(f"{path}: non-finite rate")
    if (np.diff(fpr) < 0).any():
        raise MetricError(f"{path}: fpr must be non-decreasing")
    return ROCCurve(fpr, tpr, data[:, 2], trapezoid_auc(fpr, tpr))


def format_mean_std(mean: float, std: float, digits: int = 2) -> str:
    if math.isnan(std):
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f}±{std:.{digits}f}"
