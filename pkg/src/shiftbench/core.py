"""Domain types shared across the package and the elementary risk functionals."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, ShiftBenchError

__all__ = [
    "LabeledDataset",
    "WeightVector",
    "Hypothesis",
    "HypothesisKind",
    "LossKind",
    "ShiftType",
    "ShiftSpec",
    "empirical_risk",
    "weighted_empirical_risk",
    "pointwise_loss",
    "predict",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with targets and optional integer group keys.

    Parameters
    ----------
    features : array-like, shape (n, d)
    targets : array-like, shape (n,)
        Real values for regression, dense class ids for classification.
    group_keys : array-like of int, shape (n,), optional
        E.g. the publish year of each row.
    """

    features: np.ndarray
    targets: np.ndarray
    group_keys: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[1] < 1:
            raise DataError(f"features must be a 2-D matrix with d >= 1, got shape {x.shape}")
        y = np.array(self.targets)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DataError(f"targets length {y.shape} does not match {x.shape[0]} feature rows")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "targets", _frozen(y))
        if self.group_keys is not None:
            g = np.array(self.group_keys, dtype=np.int64)
            if g.shape != (x.shape[0],):
                raise DataError("group_keys length does not match feature rows")
            object.__setattr__(self, "group_keys", _frozen(g))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        keys = None if self.group_keys is None else self.group_keys[idx]
        return LabeledDataset(self.features[idx], self.targets[idx], keys)


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-instance importance weights."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ShiftBenchError("weights must be finite")
        if np.any(v < 0):
            raise ShiftBenchError("weights must be nonnegative")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def ones(cls, n: int) -> "WeightVector":
        return cls(np.ones(n))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


class HypothesisKind(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    SET_SCORER = "set_scorer"


@dataclass(frozen=True)
class Hypothesis:
    """Fitted parameters.

    For ``linear`` the parameters are ``d`` coefficients followed by the
    intercept. For ``logistic`` with ``n_classes`` classes they are a
    flattened ``(d + 1, n_classes)`` matrix whose last row holds the
    intercepts; the binary case uses a single column (``d + 1`` values) and
    models ``p(y=1 | x)``. Set scorers store their own layout (see
    :mod:`shiftbench.matching`).
    """

    kind: HypothesisKind
    params: np.ndarray
    dim: int
    n_classes: int = 1
    loss: Optional["LossKind"] = None

    def __post_init__(self):
        kind = HypothesisKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = _frozen(np.array(self.params, dtype=float).reshape(-1))
        object.__setattr__(self, "params", p)
        if kind is HypothesisKind.LINEAR and p.size != self.dim + 1:
            raise ShiftBenchError(f"linear hypothesis needs {self.dim + 1} params, got {p.size}")
        if kind is HypothesisKind.LOGISTIC:
            cols = 1 if self.n_classes <= 2 else self.n_classes
            if p.size != (self.dim + 1) * cols:
                raise ShiftBenchError(
                    f"logistic hypothesis needs {(self.dim + 1) * cols} params, got {p.size}"
                )

    @property
    def coef_matrix(self) -> np.ndarray:
        cols = 1 if self.n_classes <= 2 else self.n_classes
        return self.params.reshape(self.dim + 1, cols)


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    ABSOLUTE = "absolute"
    CROSS_ENTROPY = "cross_entropy"


class ShiftType(str, enum.Enum):
    NONE = "none"
    COVARIATE = "covariate"
    TARGET = "target"
    CONCEPT = "concept"
    GENERAL = "general"


@dataclass(frozen=True)
class ShiftSpec:
    """Declarative description of a shifted train/test split.

    Target shift uses the Gaussian acceptance profiles
    ``(train_mu, train_sigma)`` and ``(test_mu, test_sigma)``; covariate
    shift by group uses ``train_groups`` / ``test_groups``. The general case
    only records the mutable/immutable variable partition.
    """

    shift_type: ShiftType = ShiftType.NONE
    train_mu: Optional[float] = None
    train_sigma: Optional[float] = None
    test_mu: Optional[float] = None
    test_sigma: Optional[float] = None
    train_groups: Optional[tuple] = None
    test_groups: Optional[tuple] = None
    mutable_vars: Optional[tuple] = None
    immutable_vars: Optional[tuple] = None
    seed: int = 0

    _REQUIRED = {
        ShiftType.TARGET: ("train_mu", "train_sigma", "test_mu", "test_sigma"),
        ShiftType.COVARIATE: ("train_groups", "test_groups"),
        ShiftType.GENERAL: ("mutable_vars", "immutable_vars"),
    }
    _ALL = (
        "train_mu", "train_sigma", "test_mu", "test_sigma",
        "train_groups", "test_groups", "mutable_vars", "immutable_vars",
    )

    def __post_init__(self):
        st = ShiftType(self.shift_type)
        object.__setattr__(self, "shift_type", st)
        for name in ("train_groups", "test_groups", "mutable_vars", "immutable_vars"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(val))
        if not 0 <= int(self.seed) < 2**64:
            raise ShiftBenchError("seed must be a 64-bit unsigned integer")
        for name in ("train_sigma", "test_sigma"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ShiftBenchError(f"{name} must be > 0")
        required = self._REQUIRED.get(st, ())
        for name in self._ALL:
            present = getattr(self, name) is not None
            if name in required and not present:
                raise ShiftBenchError(f"{st.value} shift requires {name}")
            if present and name not in required and st is not ShiftType.NONE:
                raise ShiftBenchError(f"{name} is not used by {st.value} shift")
        if self.train_groups and self.test_groups and st is not ShiftType.NONE:
            overlap = set(self.train_groups) & set(self.test_groups)
            if overlap:
                raise ShiftBenchError(f"train/test groups overlap {sorted(overlap)} under {st.value} shift")
        if st is ShiftType.GENERAL and set(self.mutable_vars) & set(self.immutable_vars):
            raise ShiftBenchError("mutable and immutable variable sets must be disjoint")


def predict(h: Hypothesis, x) -> np.ndarray:
    """Real-valued predictions for linear models, class probabilities for logistic.

    Logistic output has shape ``(n,)`` (probability of class 1) in the binary
    case and ``(n, n_classes)`` otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] != h.dim:
        raise ShiftBenchError(f"dim mismatch: hypothesis expects {h.dim}, data has {x.shape[1]}")
    if h.kind is HypothesisKind.LINEAR:
        return x @ h.params[:-1] + h.params[-1]
    if h.kind is HypothesisKind.LOGISTIC:
        logits = x @ h.coef_matrix[:-1] + h.coef_matrix[-1]
        if h.n_classes <= 2:
            return 1.0 / (1.0 + np.exp(-logits[:, 0]))
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    raise ShiftBenchError("set scorers are evaluated through shiftbench.matching")


def _logistic_nll(h: Hypothesis, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    logits = x @ h.coef_matrix[:-1] + h.coef_matrix[-1]
    y = y.astype(np.int64)
    if h.n_classes <= 2:
        z = logits[:, 0]
        # -log sigmoid(z) for y=1, -log(1-sigmoid(z)) for y=0
        return np.logaddexp(0.0, np.where(y == 1, -z, z))
    return logsumexp(logits, axis=1) - logits[np.arange(len(y)), y]


def pointwise_loss(h: Hypothesis, data: LabeledDataset, loss: LossKind) -> np.ndarray:
    """Per-row loss values ``loss(y_i, h(x_i))``."""
    if data.n == 0:
        raise ShiftBenchError("empty dataset")
    if data.d != h.dim:
        raise ShiftBenchError(f"dim mismatch: hypothesis expects {h.dim}, data has {data.d}")
    loss = LossKind(loss)
    if loss is LossKind.CROSS_ENTROPY:
        if h.kind is not HypothesisKind.LOGISTIC:
            raise ShiftBenchError("cross-entropy needs a logistic hypothesis")
        return _logistic_nll(h, data.features, data.targets)
    pred = predict(h, data.features)
    resid = data.targets.astype(float) - pred
    if loss is LossKind.SQUARED:
        return resid**2
    return np.abs(resid)


def empirical_risk(h: Hypothesis, data: LabeledDataset, loss: LossKind) -> float:
    """Mean loss over the dataset."""
    return float(np.mean(pointwise_loss(h, data, loss)))


def weighted_empirical_risk(
    h: Hypothesis, data: LabeledDataset, w: WeightVector | Sequence[float], loss: LossKind
) -> float:
    """``(1/n) * sum_i w_i * loss(y_i, h(x_i))``."""
    if not isinstance(w, WeightVector):
        w = WeightVector(w)
    if len(w) != data.n:
        raise ShiftBenchError(f"weight length {len(w)} does not match dataset size {data.n}")
    return float(np.mean(w.values * pointwise_loss(h, data, loss)))
