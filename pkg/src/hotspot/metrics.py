"""Binary classification metrics: confusion counts, P/R/F1, ROC and PR curves."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LengthMismatch, NoPositives, SingleClassLabels

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class Curve:
    kind: str
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray
    area: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "x", "y"])
            for t, x, y in zip(self.thresholds, self.x, self.y):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


@dataclass(frozen=True)
class WeightSweepRow:
    weight: float
    precision: float
    recall: float
    f1: float


@dataclass
class WeightSweep:
    rows: list[WeightSweepRow] = field(default_factory=list)

    @property
    def best_weight(self) -> float:
        # first maximum wins, so ties keep the earlier weight
        best = max(range(len(self.rows)), key=lambda i: (self.rows[i].f1, -i))
        return self.rows[best].weight

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["weight", "precision", "recall", "f1"])
            for r in self.rows:
                w.writerow([repr(r.weight), repr(r.precision), repr(r.recall), repr(r.f1)])


def _arrays(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels).astype(np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if len(y) != len(s):
        raise LengthMismatch(f"{len(y)} labels vs {len(s)} scores")
    return y, s


def confusion(labels, scores, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """Counts with the rule: predicted positive iff score >= threshold."""
    y, s = _arrays(labels, scores)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int((pred & pos).sum()),
        fp=int((pred & ~pos).sum()),
        tn=int((~pred & ~pos).sum()),
        fn=int((~pred & pos).sum()),
    )


def prf1(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1; each is 0 when its denominator is 0."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _threshold_counts(y: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) at each distinct score, scanning thresholds downward."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s_sorted)), len(s_sorted) - 1]
    tp = np.cumsum(y_sorted == 1)[last_of_group]
    fp = np.cumsum(y_sorted != 1)[last_of_group]
    return s_sorted[last_of_group], tp, fp


def roc_curve(labels, scores) -> Curve:
    """(FPR, TPR) at every distinct threshold with (0, 0) prepended.

    The area is the trapezoid sum, evaluated on integer counts and divided once,
    so it equals the pairwise rank statistic exactly.
    """
    y, s = _arrays(labels, scores)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("ROC needs both classes")
    thr, tp, fp = _threshold_counts(y, s)
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    thr = np.r_[np.inf, thr]
    twice_area = int(((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])).sum())
    area = twice_area / (2 * n_pos * n_neg)
    return Curve("ROC", fp / n_neg, tp / n_pos, thr, area)


def pr_curve(labels, scores) -> Curve:
    """(recall, precision) at every distinct threshold; area is average precision."""
    y, s = _arrays(labels, scores)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise NoPositives("PR curve needs at least one positive label")
    thr, tp, fp = _threshold_counts(y, s)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    area = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return Curve("PR", recall, precision, thr, area)


def pairwise_auc(labels, scores) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    y, s = _arrays(labels, scores)
    pos, neg = s[y == 1], s[y != 1]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassLabels("AUC needs both classes")
    greater = int((pos[:, None] > neg[None, :]).sum())
    ties = int((pos[:, None] == neg[None, :]).sum())
    return (2 * greater + ties) / (2 * len(pos) * len(neg))


def weight_sweep(
    train_fn: Callable[[float], Callable],
    eval_labels,
    eval_X,
    weights: Sequence[float],
    threshold: float = DEFAULT_THRESHOLD,
) -> WeightSweep:
    """Train one model per positive-class weight and score P/R/F1 at ``threshold``.

    ``train_fn(weight)`` returns a scorer mapping ``eval_X`` to positive-class
    probabilities; everything except the weight must be held fixed by it.
    """
    if not len(weights):
        raise ValueError("weights must be non-empty")
    sweep = WeightSweep()
    for weight in weights:
        scorer = train_fn(float(weight))
        p, r, f = prf1(confusion(eval_labels, scorer(eval_X), threshold))
        sweep.rows.append(WeightSweepRow(float(weight), p, r, f))
    return sweep
