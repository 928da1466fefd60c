"""Shift-magnitude and performance metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShiftBenchError

__all__ = ["MetricReport", "wasserstein1d", "mae", "accuracy", "auc"]


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ShiftBenchError(f"metric {self.name} is not finite")
        if self.n < 1:
            raise ShiftBenchError("metric needs at least one sample")


def _as_sample(a, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size == 0:
        raise ShiftBenchError(f"empty input: {name}")
    if not np.all(np.isfinite(a)):
        raise ShiftBenchError(f"non-finite values in {name}")
    return a


def wasserstein1d(a, b) -> float:
    """Order-1 Wasserstein distance between two empirical distributions.

    Equal-size samples use the sorted coupling directly; otherwise the
    distance is the integral of ``|F_a - F_b|`` over the merged support.
    """
    a = np.sort(_as_sample(a, "a"))
    b = np.sort(_as_sample(b, "b"))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    support = np.concatenate([a, b])
    support.sort(kind="mergesort")
    widths = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def _paired(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ShiftBenchError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise ShiftBenchError("empty input")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred.astype(float) - truth.astype(float))))


def accuracy(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.mean(pred == truth))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    ``labels`` are 0/1 with 1 the positive class; tied scores receive
    averaged ranks.
    """
    scores, labels = _paired(scores, labels)
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ShiftBenchError("auc needs both classes present")
    ranks = rankdata(scores.astype(float))
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
