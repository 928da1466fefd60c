"""Importance-weight estimation and the adaptive/relative weight transforms."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import WeightVector
from .errors import DataError, NumericError, ShiftBenchError
from .learning import GdConfig, analytic_logistic_gradient, logistic_loss

__all__ = [
    "DEFAULT_BETA",
    "DISCRIMINATOR_GD",
    "RatioMethod",
    "WeightTransform",
    "RatioEstimate",
    "SourceDiscriminator",
    "gaussian_log_densities",
    "gaussian_density_ratio",
    "fit_source_discriminator",
    "weights_from_discriminator",
    "transform_aiw",
    "transform_riw",
    "self_normalize",
    "estimate_from_log_densities",
]

DEFAULT_BETA = 20.0
VARIANCE_FLOOR = 1e-9
DISCRIMINATOR_GD = GdConfig(learning_rate=0.05, epochs=20, batch_size=32, seed=0)


class RatioMethod(str, enum.Enum):
    TRUE_RATIO = "true_ratio"
    GAUSSIAN_FIT = "gaussian_fit"
    DISCRIMINATOR = "discriminator"


class WeightTransform(str, enum.Enum):
    IW = "iw"
    AIW = "aiw"
    RIW = "riw"


@dataclass(frozen=True)
class RatioEstimate:
    method: RatioMethod
    alpha: float
    transform: WeightTransform
    weights: WeightVector

    def __post_init__(self):
        object.__setattr__(self, "method", RatioMethod(self.method))
        object.__setattr__(self, "transform", WeightTransform(self.transform))
        if not 0.0 <= self.alpha <= 1.0:
            raise ShiftBenchError(f"alpha must lie in [0, 1], got {self.alpha}")


def _matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if np.any(np.isnan(x)):
        raise DataError(f"NaN in {name}")
    return x


def _diag_gaussian_logpdf(q, mean, var):
    return -0.5 * np.sum(np.log(2 * np.pi * var) + (q - mean) ** 2 / var, axis=1)


def gaussian_log_densities(train_x, test_x, query_x):
    """Fit one diagonal Gaussian per sample; return ``(log p_te, log p_tr)`` at the queries."""
    train_x = _matrix(train_x, "train_x")
    test_x = _matrix(test_x, "test_x")
    query_x = _matrix(query_x, "query_x")
    if train_x.shape[0] < 2 or test_x.shape[0] < 2:
        raise DataError("each sample needs at least 2 rows")
    if not train_x.shape[1] == test_x.shape[1] == query_x.shape[1]:
        raise ShiftBenchError("dim mismatch between samples")
    var_tr = np.maximum(train_x.var(axis=0), VARIANCE_FLOOR)
    var_te = np.maximum(test_x.var(axis=0), VARIANCE_FLOOR)
    return (
        _diag_gaussian_logpdf(query_x, test_x.mean(axis=0), var_te),
        _diag_gaussian_logpdf(query_x, train_x.mean(axis=0), var_tr),
    )


def gaussian_density_ratio(train_x, test_x, query_x) -> WeightVector:
    """``p_te(q) / p_tr(q)`` under per-sample diagonal Gaussian fits, evaluated in log space."""
    log_te, log_tr = gaussian_log_densities(train_x, test_x, query_x)
    w = np.exp(log_te - log_tr)
    if not np.all(np.isfinite(w)):
        raise NumericError("density ratio overflowed")
    return WeightVector(w)


@dataclass(frozen=True)
class SourceDiscriminator:
    """Linear logistic model of ``g(x) = p(s = 1 | x)``, ``s = 1`` meaning the training sample.

    ``params`` holds ``d`` coefficients followed by the intercept. Under a
    density ratio bounded by ``beta`` the optimal ``g`` lies in
    ``[1/(1+beta), 1]``; predictions are clipped into that interval.
    """

    params: np.ndarray
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        p = np.array(self.params, dtype=float).reshape(-1)
        p.setflags(write=False)
        object.__setattr__(self, "params", p)
        if not self.beta > 0:
            raise ShiftBenchError("beta must be > 0")

    @property
    def dim(self) -> int:
        return self.params.size - 1

    def _check(self, x):
        x = _matrix(x, "query_x")
        if x.shape[1] != self.dim:
            raise ShiftBenchError(f"dim mismatch: discriminator expects {self.dim}, got {x.shape[1]}")
        return x

    def raw_proba(self, x) -> np.ndarray:
        x = self._check(x)
        return expit(x @ self.params[:-1] + self.params[-1])

    def proba(self, x) -> np.ndarray:
        """Clipped ``g(x)``."""
        return np.clip(self.raw_proba(x), 1.0 / (1.0 + self.beta), 1.0)

    def test_probability(self, x) -> np.ndarray:
        """Per-item ``p(test | x) = 1 - g(x)`` in ``[0, beta/(1+beta)]``."""
        return 1.0 - self.proba(x)

    def densities(self, x):
        """``(p_te, p_tr)`` up to the common factor ``2 p(x)``."""
        g = self.proba(x)
        return 1.0 - g, g


def fit_source_discriminator(
    train_x,
    test_x,
    beta: float = DEFAULT_BETA,
    gd: GdConfig = DISCRIMINATOR_GD,
) -> SourceDiscriminator:
    """Logistic regression separating the training sample (``s=1``) from the test sample.

    The larger side is subsampled to the size of the smaller one at every
    epoch so that the implied prior is ``p(s) = 0.5``. Optimization runs on
    standardized features; parameters are returned in raw feature space.
    """
    train_x = _matrix(train_x, "train_x")
    test_x = _matrix(test_x, "test_x")
    if train_x.shape[0] == 0 or test_x.shape[0] == 0:
        raise DataError("both samples must be nonempty")
    if train_x.shape[1] != test_x.shape[1]:
        raise ShiftBenchError("dim mismatch between samples")
    if not beta > 0:
        raise ShiftBenchError("beta must be > 0")
    x = np.vstack([train_x, test_x])
    s = np.concatenate([np.ones(train_x.shape[0], np.int64), np.zeros(test_x.shape[0], np.int64)])
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xs = (x - mu) / sd

    pos = np.arange(train_x.shape[0])
    neg = np.arange(train_x.shape[0], x.shape[0])
    m = min(pos.size, neg.size)
    rng = np.random.default_rng(gd.seed)
    params = np.zeros(x.shape[1] + 1)
    for epoch in range(gd.epochs):
        rows = np.concatenate([
            pos if pos.size == m else rng.choice(pos, m, replace=False),
            neg if neg.size == m else rng.choice(neg, m, replace=False),
        ])
        rows = rng.permutation(rows)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, rows.size, gd.batch_size):
                idx = rows[start:start + gd.batch_size]
                params -= gd.learning_rate * analytic_logistic_gradient(
                    params, xs[idx], s[idx], np.ones(idx.size)
                )
            loss = logistic_loss(params, xs, s, np.ones(s.size))
        if not np.isfinite(loss) or not np.all(np.isfinite(params)):
            raise NumericError(f"non-finite discriminator loss at epoch {epoch}")
    coef = params[:-1] / sd
    intercept = params[-1] - mu @ coef
    return SourceDiscriminator(np.append(coef, intercept), beta)


def weights_from_discriminator(disc: SourceDiscriminator, query_x) -> WeightVector:
    """``w = (1 - g) / g`` with ``g`` clipped, hence ``0 <= w <= beta``."""
    g = disc.proba(query_x)
    return WeightVector(np.minimum((1.0 - g) / g, disc.beta))


def transform_aiw(w, alpha: float) -> WeightVector:
    """Flatten weights to ``w ** alpha`` (``0 ** 0 == 1``)."""
    if not 0.0 <= alpha <= 1.0:
        raise ShiftBenchError(f"alpha must lie in [0, 1], got {alpha}")
    v = np.asarray(w.values if isinstance(w, WeightVector) else w, dtype=float)
    if np.any(v < 0):
        raise ShiftBenchError("weights must be nonnegative")
    return WeightVector(np.power(v, alpha))


def transform_riw(p_te, p_tr, alpha: float) -> WeightVector:
    """Relative ratio ``p_te / ((1 - alpha) p_tr + alpha p_te)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ShiftBenchError(f"alpha must lie in [0, 1], got {alpha}")
    p_te = np.asarray(p_te, dtype=float).reshape(-1)
    p_tr = np.asarray(p_tr, dtype=float).reshape(-1)
    if p_te.shape != p_tr.shape:
        raise ShiftBenchError("density vectors differ in length")
    if np.any(p_te < 0) or np.any(p_tr < 0):
        raise ShiftBenchError("densities must be nonnegative")
    both = np.flatnonzero((p_te == 0) & (p_tr == 0))
    if both.size:
        raise ShiftBenchError(f"both densities are zero at index {int(both[0])}")
    denom = (1.0 - alpha) * p_tr + alpha * p_te
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(p_te == 0, 0.0, p_te / denom)
    if not np.all(np.isfinite(w)):
        bad = int(np.flatnonzero(~np.isfinite(w))[0])
        raise NumericError(f"relative ratio is not finite at index {bad}")
    return WeightVector(w)


def self_normalize(w) -> WeightVector:
    """Rescale so the mean weight is one."""
    v = np.asarray(w.values if isinstance(w, WeightVector) else w, dtype=float)
    total = v.sum()
    if not total > 0:
        raise ShiftBenchError("cannot normalize all-zero weights")
    return WeightVector(v * (v.size / total), normalized=True)


def estimate_from_log_densities(
    log_te, log_tr, transform: WeightTransform, alpha: float = 0.0,
    method: RatioMethod = RatioMethod.TRUE_RATIO, normalize: bool = False,
) -> RatioEstimate:
    """Turn per-row log densities (up to a shared constant per row) into transformed weights."""
    transform = WeightTransform(transform)
    log_te = np.asarray(log_te, dtype=float)
    log_tr = np.asarray(log_tr, dtype=float)
    with np.errstate(over="ignore"):
        w = _transformed(log_te, log_tr, transform, alpha)
    if transform is WeightTransform.IW:
        alpha = 0.0
    if not np.all(np.isfinite(w)):
        raise NumericError("weights are not finite")
    w = WeightVector(w)
    if normalize:
        w = self_normalize(w)
    return RatioEstimate(method, alpha, transform, w)


def _transformed(log_te, log_tr, transform, alpha):
    if transform is WeightTransform.RIW:
        shift = np.maximum(log_te, log_tr)
        w = transform_riw(np.exp(log_te - shift), np.exp(log_tr - shift), alpha).values
    elif transform is WeightTransform.AIW:
        if not 0.0 <= alpha <= 1.0:
            raise ShiftBenchError(f"alpha must lie in [0, 1], got {alpha}")
        w = np.ones(log_te.size) if alpha == 0.0 else np.exp(alpha * (log_te - log_tr))
    else:
        w = np.exp(log_te - log_tr)
    return w
