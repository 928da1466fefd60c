"""Train/test split constructors with a controlled type and magnitude of shift."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .core import LabeledDataset, ShiftSpec, ShiftType
from .errors import DataError, ShiftBenchError
from .metrics import wasserstein1d

__all__ = [
    "SplitPair",
    "GaussianCovariateDensities",
    "TargetProfileDensities",
    "sample_target_shift",
    "sample_covariate_shift_groups",
    "make_synthetic_covariate_shift",
    "make_synthetic_concept_drift",
]

MagnitudeOn = Union[str, int]


@dataclass(frozen=True)
class GaussianCovariateDensities:
    """Isotropic Gaussian train/test marginals over the features."""

    train_mean: np.ndarray
    test_mean: np.ndarray
    sigma: float

    def log_densities(self, data: LabeledDataset):
        """Return ``(log p_te, log p_tr)`` up to a shared additive constant."""
        x = np.asarray(data.features, dtype=float)
        log_te = -np.sum((x - self.test_mean) ** 2, axis=1) / (2 * self.sigma**2)
        log_tr = -np.sum((x - self.train_mean) ** 2, axis=1) / (2 * self.sigma**2)
        return log_te, log_tr

    def ratio(self, data: LabeledDataset) -> np.ndarray:
        log_te, log_tr = self.log_densities(data)
        return np.exp(log_te - log_tr)


@dataclass(frozen=True)
class TargetProfileDensities:
    """Target marginals induced by Gaussian acceptance profiles over a pool.

    Both splits have density ``pool(y) * profile(y) / Z`` with
    ``Z = E_pool[profile]``, so the pool density cancels in the ratio.
    """

    train_mu: float
    train_sigma: float
    test_mu: float
    test_sigma: float
    log_z_train: float
    log_z_test: float

    def log_densities(self, data: LabeledDataset):
        y = np.asarray(data.targets, dtype=float)
        log_te = _log_profile(y, self.test_mu, self.test_sigma) - self.log_z_test
        log_tr = _log_profile(y, self.train_mu, self.train_sigma) - self.log_z_train
        return log_te, log_tr

    def ratio(self, data: LabeledDataset) -> np.ndarray:
        log_te, log_tr = self.log_densities(data)
        return np.exp(log_te - log_tr)


@dataclass(frozen=True)
class SplitPair:
    """A train/test pair plus the measured size of the shift between them.

    ``densities`` is set when the generating mechanism is known and exposes
    ``log_densities(data) -> (log p_te, log p_tr)``.
    """

    train: LabeledDataset
    test: LabeledDataset
    spec: ShiftSpec
    realized_magnitude: float
    densities: Optional[object] = None
    train_index: Optional[np.ndarray] = None
    test_index: Optional[np.ndarray] = None


def _magnitude(train: LabeledDataset, test: LabeledDataset, on: MagnitudeOn) -> float:
    if train.n == 0 or test.n == 0:
        return 0.0
    if on == "target":
        return wasserstein1d(train.targets, test.targets)
    return wasserstein1d(train.features[:, int(on)], test.features[:, int(on)])


def _log_profile(y, mu, sigma):
    return -((np.asarray(y, dtype=float) - mu) ** 2) / (2 * sigma**2)


def _rejection_pass(rng, candidates, log_accept, size, label):
    order = rng.permutation(candidates)
    u = rng.random(order.size)
    accepted = order[np.log(u) < log_accept[order]]
    if accepted.size < size:
        raise DataError(
            f"insufficient pool mass near requested target distribution: {label} split "
            f"got {accepted.size} of {size} rows (deficit {size - accepted.size})"
        )
    return accepted[:size]


def sample_target_shift(
    pool: LabeledDataset, spec: ShiftSpec, train_size: int, test_size: int,
    magnitude_on: MagnitudeOn = "target",
) -> SplitPair:
    """Draw disjoint train/test subsets whose targets follow two Gaussian profiles.

    Rows are visited in a seeded random order and accepted with probability
    proportional to the profile density at their target, first for the
    training split and then, over the rows the training split did not take,
    for the test split. Rows are taken whole, so ``p(x | y)`` is unchanged.
    """
    if spec.shift_type not in (ShiftType.TARGET, ShiftType.NONE) or spec.train_mu is None:
        raise ShiftBenchError("sample_target_shift needs a target-shift spec")
    if train_size < 0 or test_size < 0:
        raise ShiftBenchError("sizes must be nonnegative")
    y = np.asarray(pool.targets, dtype=float)
    if y.size == 0:
        raise DataError("insufficient pool mass near requested target distribution: empty pool")
    rng = np.random.default_rng(spec.seed)
    log_tr = _log_profile(y, spec.train_mu, spec.train_sigma)
    log_te = _log_profile(y, spec.test_mu, spec.test_sigma)

    tr_idx = _rejection_pass(rng, np.arange(y.size), log_tr - log_tr.max(), train_size, "train")
    remaining = np.setdiff1d(np.arange(y.size), tr_idx, assume_unique=True)
    te_idx = _rejection_pass(rng, remaining, log_te - log_te.max(), test_size, "test")

    train, test = pool.subset(tr_idx), pool.subset(te_idx)
    densities = TargetProfileDensities(
        spec.train_mu, spec.train_sigma, spec.test_mu, spec.test_sigma,
        float(logsumexp(log_tr) - np.log(y.size)), float(logsumexp(log_te) - np.log(y.size)),
    )
    return SplitPair(
        train, test, spec, _magnitude(train, test, magnitude_on), densities, tr_idx, te_idx
    )


def sample_covariate_shift_groups(
    pool: LabeledDataset,
    train_groups: Sequence[int],
    test_groups: Sequence[int],
    train_size: int,
    test_size: int,
    seed: int,
    magnitude_on: MagnitudeOn = "target",
) -> SplitPair:
    """Uniform subsamples of the rows belonging to two lists of groups (e.g. years).

    When the group lists overlap the test split is drawn from the rows the
    training split left over, so the two are always disjoint.
    """
    if pool.group_keys is None:
        raise DataError("pool has no group keys")
    if not train_groups or not test_groups:
        raise ShiftBenchError("both group lists must be nonempty")
    keys = pool.group_keys
    for g in list(train_groups) + list(test_groups):
        if not np.any(keys == g):
            raise DataError(f"group {g} has no rows in the pool")
    overlap = bool(set(train_groups) & set(test_groups))
    spec = ShiftSpec(
        ShiftType.NONE if overlap else ShiftType.COVARIATE,
        train_groups=tuple(train_groups), test_groups=tuple(test_groups), seed=seed,
    )
    rng = np.random.default_rng(seed)
    tr_rows = np.flatnonzero(np.isin(keys, train_groups))
    if train_size > tr_rows.size:
        raise DataError(
            f"train_size {train_size} exceeds the {tr_rows.size} rows of groups {list(train_groups)}"
        )
    tr_idx = np.sort(rng.choice(tr_rows, size=train_size, replace=False))
    te_rows = np.flatnonzero(np.isin(keys, test_groups))
    te_rows = np.setdiff1d(te_rows, tr_idx, assume_unique=True)
    if test_size > te_rows.size:
        raise DataError(
            f"test_size {test_size} exceeds the {te_rows.size} available rows of groups {list(test_groups)}"
        )
    te_idx = np.sort(rng.choice(te_rows, size=test_size, replace=False))
    train, test = pool.subset(tr_idx), pool.subset(te_idx)
    return SplitPair(train, test, spec, _magnitude(train, test, magnitude_on), None, tr_idx, te_idx)


def make_synthetic_covariate_shift(
    n_tr: int,
    n_te: int,
    d: int,
    train_mean,
    test_mean,
    sigma: float,
    coef,
    noise_sigma: float,
    seed: int,
    magnitude_on: MagnitudeOn = "target",
) -> SplitPair:
    """Gaussian inputs with shifted means and a shared linear conditional.

    ``x ~ N(mean, sigma**2 I)`` on each side and ``y = coef @ x + eps`` with
    ``eps ~ N(0, noise_sigma**2)``. The exact density ratio is available
    through ``pair.densities``.
    """
    if not sigma > 0:
        raise ShiftBenchError("sigma must be > 0")
    if noise_sigma < 0:
        raise ShiftBenchError("noise_sigma must be >= 0")
    train_mean = np.broadcast_to(np.asarray(train_mean, dtype=float), (d,)).copy()
    test_mean = np.broadcast_to(np.asarray(test_mean, dtype=float), (d,)).copy()
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (d,)).copy()
    rng = np.random.default_rng(seed)
    x_tr = train_mean + sigma * rng.standard_normal((n_tr, d))
    x_te = test_mean + sigma * rng.standard_normal((n_te, d))
    y_tr = x_tr @ coef + noise_sigma * rng.standard_normal(n_tr)
    y_te = x_te @ coef + noise_sigma * rng.standard_normal(n_te)
    spec = ShiftSpec(ShiftType.NONE if np.array_equal(train_mean, test_mean) else ShiftType.COVARIATE,
                     train_groups=(0,), test_groups=(1,), seed=seed)
    train, test = LabeledDataset(x_tr, y_tr), LabeledDataset(x_te, y_te)
    return SplitPair(
        train, test, spec, _magnitude(train, test, magnitude_on),
        GaussianCovariateDensities(train_mean, test_mean, float(sigma)),
    )


def make_synthetic_concept_drift(
    n_tr: int,
    n_te: int,
    d: int,
    coef_train,
    coef_test,
    noise_sigma: float,
    seed: int,
    magnitude_on: MagnitudeOn = "target",
) -> SplitPair:
    """Shared standard-normal inputs, different linear conditionals per split."""
    if noise_sigma < 0:
        raise ShiftBenchError("noise_sigma must be >= 0")
    coef_train = np.broadcast_to(np.asarray(coef_train, dtype=float), (d,))
    coef_test = np.broadcast_to(np.asarray(coef_test, dtype=float), (d,))
    rng = np.random.default_rng(seed)
    x_tr = rng.standard_normal((n_tr, d))
    x_te = rng.standard_normal((n_te, d))
    y_tr = x_tr @ coef_train + noise_sigma * rng.standard_normal(n_tr)
    y_te = x_te @ coef_test + noise_sigma * rng.standard_normal(n_te)
    drift = not np.array_equal(coef_train, coef_test)
    spec = ShiftSpec(ShiftType.CONCEPT if drift else ShiftType.NONE, seed=seed)
    train, test = LabeledDataset(x_tr, y_tr), LabeledDataset(x_te, y_te)
    return SplitPair(train, test, spec, _magnitude(train, test, magnitude_on))
