"""Weighted empirical risk minimization for linear and logistic models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit, logsumexp

from .core import (
    Hypothesis,
    HypothesisKind,
    LabeledDataset,
    LossKind,
    WeightVector,
    pointwise_loss,
    predict,
)
from .errors import DataError, NumericError, ShiftBenchError

__all__ = [
    "GdConfig",
    "fit_weighted_linear",
    "fit_weighted_logistic",
    "predict_class",
    "logistic_loss",
    "analytic_logistic_gradient",
    "DecompositionTerms",
    "risk_decomposition_check",
    "ConsistencyProbe",
    "iw_consistency_probe",
]

DEFAULT_RIDGE = 1e-8


@dataclass(frozen=True)
class GdConfig:
    """Plain mini-batch SGD settings.

    Defaults follow the category-classification setup (batch 32, 10 epochs,
    learning rate 0.005).
    """

    learning_rate: float = 0.005
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ShiftBenchError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ShiftBenchError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ShiftBenchError("batch_size must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ShiftBenchError("seed must be a 64-bit unsigned integer")


def _weights_for(data: LabeledDataset, w) -> np.ndarray:
    if w is None:
        return np.ones(data.n)
    if not isinstance(w, WeightVector):
        w = WeightVector(w)
    if len(w) != data.n:
        raise ShiftBenchError(f"weight length {len(w)} does not match dataset size {data.n}")
    return w.values


def fit_weighted_linear(
    data: LabeledDataset, w: Optional[WeightVector] = None, ridge: float = DEFAULT_RIDGE
) -> Hypothesis:
    """Exact weighted least squares with an explicit intercept.

    Minimizes ``sum_i w_i (y_i - theta @ [x_i, 1])**2 + ridge * ||theta||**2``
    by solving the stacked system ``[sqrt(W) X; sqrt(ridge) I]`` in the
    least-squares sense, which yields the minimum-norm solution when the
    weighted Gram matrix is singular and ``ridge == 0``.
    """
    if data.n < 1:
        raise ShiftBenchError("empty dataset")
    if ridge < 0:
        raise ShiftBenchError("ridge must be >= 0")
    y = np.asarray(data.targets, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError("targets contain NaN or inf")
    sw = np.sqrt(_weights_for(data, w))
    X = np.hstack([data.features, np.ones((data.n, 1))])
    A = X * sw[:, None]
    b = y * sw
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(X.shape[1])])
        b = np.concatenate([b, np.zeros(X.shape[1])])
    theta, *_ = np.linalg.lstsq(A, b, rcond=None)
    return Hypothesis(HypothesisKind.LINEAR, theta, data.d, loss=LossKind.SQUARED)


def _logits(params: np.ndarray, x: np.ndarray, n_cols: int) -> np.ndarray:
    W = params.reshape(x.shape[1] + 1, n_cols)
    return x @ W[:-1] + W[-1]


def logistic_loss(params, x, y, w, n_classes: int = 2) -> float:
    """Weighted mean cross-entropy ``(1/B) sum_i w_i CE_i`` of a raw parameter vector."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(np.int64)
    w = np.asarray(w, dtype=float)
    n_cols = 1 if n_classes <= 2 else n_classes
    z = _logits(np.asarray(params, dtype=float), x, n_cols)
    if n_cols == 1:
        ce = np.logaddexp(0.0, np.where(y == 1, -z[:, 0], z[:, 0]))
    else:
        ce = logsumexp(z, axis=1) - z[np.arange(len(y)), y]
    return float(np.mean(w * ce))


def analytic_logistic_gradient(params, x, y, w, n_classes: int = 2) -> np.ndarray:
    """Gradient of :func:`logistic_loss` with respect to the flat parameters."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(np.int64)
    w = np.asarray(w, dtype=float)
    n_cols = 1 if n_classes <= 2 else n_classes
    z = _logits(np.asarray(params, dtype=float), x, n_cols)
    if n_cols == 1:
        resid = (expit(z[:, 0]) - (y == 1))[:, None]
    else:
        resid = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        resid[np.arange(len(y)), y] -= 1.0
    resid *= (w / len(y))[:, None]
    grad = np.vstack([x.T @ resid, resid.sum(axis=0, keepdims=True)])
    return grad.reshape(-1)


def fit_weighted_logistic(
    data: LabeledDataset,
    w: Optional[WeightVector] = None,
    gd: GdConfig = GdConfig(),
    n_classes: Optional[int] = None,
) -> Hypothesis:
    """Weighted logistic (binary) or softmax (multiclass) regression by seeded SGD.

    Features are standardized with the weighted mean and standard deviation
    before optimization and the parameters are mapped back to the raw
    feature space afterwards. Each epoch visits a fresh permutation of the
    rows in mini-batches of ``gd.batch_size``.
    """
    y = np.asarray(data.targets)
    if y.size == 0:
        raise ShiftBenchError("empty dataset")
    if not np.all(np.equal(np.mod(y, 1), 0)) or np.any(y < 0):
        raise DataError("classification targets must be nonnegative integer ids")
    y = y.astype(np.int64)
    if np.unique(y).size < 2:
        raise DataError("degenerate labels: at least two classes are required")
    n_classes = int(n_classes or y.max() + 1)
    if y.max() >= n_classes:
        raise DataError(f"class id {y.max()} out of range for {n_classes} classes")
    wv = _weights_for(data, w)
    total = wv.sum()
    if not total > 0:
        raise ShiftBenchError("all weights are zero")

    x = data.features
    mu = (wv @ x) / total
    sd = np.sqrt((wv @ (x - mu) ** 2) / total)
    sd[sd < 1e-12] = 1.0
    xs = (x - mu) / sd

    n_cols = 1 if n_classes <= 2 else n_classes
    params = np.zeros((data.d + 1) * n_cols)
    rng = np.random.default_rng(gd.seed)
    n = data.n
    for epoch in range(gd.epochs):
        order = rng.permutation(n)
        # divergence is reported below, so overflow inside the step is not worth a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, gd.batch_size):
                idx = order[start:start + gd.batch_size]
                params -= gd.learning_rate * analytic_logistic_gradient(
                    params, xs[idx], y[idx], wv[idx], n_classes
                )
        if not np.all(np.isfinite(params)):
            raise NumericError(f"non-finite parameters after epoch {epoch}")

    Ws = params.reshape(data.d + 1, n_cols)
    coef = Ws[:-1] / sd[:, None]
    intercept = Ws[-1] - mu @ coef
    raw = np.vstack([coef, intercept[None, :]])
    return Hypothesis(
        HypothesisKind.LOGISTIC, raw, data.d, n_classes=n_classes, loss=LossKind.CROSS_ENTROPY
    )


def predict_class(h: Hypothesis, x) -> np.ndarray:
    proba = predict(h, x)
    if proba.ndim == 1:
        return (proba > 0.5).astype(np.int64)
    return np.argmax(proba, axis=1)


class DecompositionTerms(NamedTuple):
    lhs: float
    term_hat: float
    term_gap: float


def risk_decomposition_check(
    data: LabeledDataset, true_w: WeightVector, est_w: WeightVector, h: Hypothesis
) -> DecompositionTerms:
    """Split the true-weighted squared error into estimated-weight and gap parts.

    ``lhs = mean(w * e)``, ``term_hat = mean(w_hat * e)`` and
    ``term_gap = mean((w - w_hat) * e)`` where ``e`` is the squared
    prediction error of ``h`` on each row.
    """
    tw = _weights_for(data, true_w)
    ew = _weights_for(data, est_w)
    sq = pointwise_loss(h, data, LossKind.SQUARED)
    return DecompositionTerms(
        float(np.mean(tw * sq)), float(np.mean(ew * sq)), float(np.mean((tw - ew) * sq))
    )


class ConsistencyProbe(NamedTuple):
    weighted_train_risk: float
    train_se: float
    test_risk: float
    test_se: float

    @property
    def gap(self) -> float:
        return abs(self.weighted_train_risk - self.test_risk)

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.train_se, self.test_se))


def iw_consistency_probe(
    h: Hypothesis, train: LabeledDataset, w: WeightVector, test: LabeledDataset,
    loss: LossKind = LossKind.SQUARED,
) -> ConsistencyProbe:
    """Importance-weighted training risk against the plain test risk, with standard errors."""
    wl = _weights_for(train, w) * pointwise_loss(h, train, loss)
    tl = pointwise_loss(h, test, loss)
    return ConsistencyProbe(
        float(wl.mean()), float(wl.std(ddof=1) / np.sqrt(wl.size)),
        float(tl.mean()), float(tl.std(ddof=1) / np.sqrt(tl.size)),
    )
