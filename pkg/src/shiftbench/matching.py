"""Permutation-invariant set scoring and the (importance-weighted) K-pair-set loss.

Each item is encoded as ``tanh(x @ proj + bias)``; a set is the mean of its
item codes and two sets are scored by the inner product of their codes.
Gradients are derived by hand, so training needs nothing beyond numpy.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .core import Hypothesis, HypothesisKind
from .errors import DataError, NumericError, ShiftBenchError
from .learning import GdConfig

__all__ = [
    "MATCHING_GD",
    "DEFAULT_EMBED_DIM",
    "ItemSet",
    "Outfit",
    "SetScorerParams",
    "MatchingTask",
    "IWStrategy",
    "MatchingWeighting",
    "init_params",
    "embed_set",
    "match_score",
    "kpair_loss",
    "weighted_kpair_loss",
    "pair_test_probability",
    "split_outfit",
    "build_fitnb_tasks",
    "tuple_loss_and_grad",
    "train_matcher",
    "evaluate_fitnb",
]

MATCHING_GD = GdConfig(learning_rate=0.001, epochs=32, batch_size=32, seed=0)
DEFAULT_EMBED_DIM = 32


def _items(a, name="items") -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShiftBenchError(f"empty set: {name}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ItemSet:
    """A nonempty set of d-dimensional item vectors (rows)."""

    items: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "items", _items(self.items))

    def __len__(self) -> int:
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]


@dataclass(frozen=True)
class Outfit:
    """Item vectors of one outfit plus its year key."""

    items: np.ndarray
    year: int = 0
    set_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "items", _items(self.items))
        if self.items.shape[0] < 4:
            warnings.warn(f"outfit {self.set_id} has {self.items.shape[0]} items; outfits normally have >= 4")

    def __len__(self) -> int:
        return self.items.shape[0]


@dataclass(frozen=True)
class SetScorerParams:
    """Shared item encoder ``tanh(x @ proj + bias)``; ``proj`` is ``d x e``."""

    proj: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        proj = np.array(self.proj, dtype=float)
        bias = np.array(self.bias, dtype=float).reshape(-1)
        if proj.ndim != 2 or proj.shape[1] != bias.size or bias.size < 1:
            raise ShiftBenchError(f"inconsistent encoder shapes {proj.shape} / {bias.shape}")
        if not (np.all(np.isfinite(proj)) and np.all(np.isfinite(bias))):
            raise NumericError("encoder parameters are not finite")
        proj.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "proj", proj)
        object.__setattr__(self, "bias", bias)

    @property
    def d(self) -> int:
        return self.proj.shape[0]

    @property
    def e(self) -> int:
        return self.proj.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.proj.ravel(), self.bias])

    @classmethod
    def from_flat(cls, flat, d: int, e: int) -> "SetScorerParams":
        flat = np.asarray(flat, dtype=float)
        return cls(flat[: d * e].reshape(d, e), flat[d * e:])

    def to_hypothesis(self) -> Hypothesis:
        return Hypothesis(HypothesisKind.SET_SCORER, self.flat(), self.d)


@dataclass(frozen=True)
class MatchingTask:
    """Query half ``V`` with ``K`` candidate halves; ``candidates[correct]`` completes it."""

    query: ItemSet
    candidates: tuple
    correct: int

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 2:
            raise ShiftBenchError("a matching task needs K >= 2 candidates")
        if not 0 <= self.correct < len(self.candidates):
            raise ShiftBenchError(f"correct index {self.correct} out of range")

    @property
    def k(self) -> int:
        return len(self.candidates)


def init_params(d: int, e: int = DEFAULT_EMBED_DIM, seed: int = 0) -> SetScorerParams:
    """Seeded uniform initialization in ``[-1/sqrt(d), 1/sqrt(d)]``."""
    rng = np.random.default_rng(seed)
    lim = 1.0 / np.sqrt(d)
    return SetScorerParams(rng.uniform(-lim, lim, (d, e)), rng.uniform(-lim, lim, e))


def _sorted_rows(x: np.ndarray) -> np.ndarray:
    return x[np.lexsort(x.T[::-1])]


def embed_set(params: SetScorerParams, s) -> np.ndarray:
    """Mean item code of a set; rows are put in lexicographic order before summing."""
    x = s.items if isinstance(s, (ItemSet, Outfit)) else _items(s)
    if x.shape[1] != params.d:
        raise ShiftBenchError(f"dim mismatch: encoder expects {params.d}, items have {x.shape[1]}")
    h = np.tanh(_sorted_rows(x) @ params.proj + params.bias)
    return h.sum(axis=0) / h.shape[0]


def match_score(params: SetScorerParams, v, w) -> float:
    return float(embed_set(params, v) @ embed_set(params, w))


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
        raise ShiftBenchError(f"scores must be a nonempty K x K matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericError("non-finite score")
    return s


def _diag_log_softmax(s: np.ndarray) -> np.ndarray:
    return np.diagonal(s, axis1=-2, axis2=-1) - logsumexp(s, axis=-1)


def kpair_loss(scores) -> float:
    """``-(1/K) sum_i log softmax(scores[i])[i]``."""
    s = _check_scores(scores)
    return float(-np.mean(_diag_log_softmax(s)))


def _check_probs(pair_probs, k: int, lenient: bool) -> np.ndarray:
    p = np.asarray(pair_probs, dtype=float).reshape(-1)
    if p.size != k:
        raise ShiftBenchError(f"expected {k} pair probabilities, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite pair probability")
    if np.any((p < 0) | (p > 1)):
        if not lenient:
            raise ShiftBenchError("pair probabilities must lie in [0, 1]")
        warnings.warn("clipping pair probabilities into [0, 1]")
        p = np.clip(p, 0.0, 1.0)
    return p


def weighted_kpair_loss(scores, pair_probs, lenient: bool = False) -> float:
    """K-pair-set loss with the ``i``-th term scaled by ``exp(pair_probs[i])``."""
    s = _check_scores(scores)
    p = _check_probs(pair_probs, s.shape[0], lenient)
    return float(-np.mean(np.exp(p) * _diag_log_softmax(s)))


class IWStrategy(str, enum.Enum):
    MAX_IW = "max_iw"
    MEAN_IW = "mean_iw"


def pair_test_probability(weights_of_union, strategy) -> float:
    """Aggregate per-item test scores over ``V u W`` by max or mean."""
    v = np.asarray(weights_of_union, dtype=float).reshape(-1)
    if v.size == 0:
        raise ShiftBenchError("empty union")
    if IWStrategy(strategy) is IWStrategy.MAX_IW:
        return float(v.max())
    return float(v.mean())


def split_outfit(o, rng: np.random.Generator):
    """Random partition of an outfit into two nonempty halves ``(V, W)``.

    The size of ``V`` is uniform over ``1..|o|-1`` and membership is uniform
    given the size.
    """
    x = o.items if isinstance(o, (Outfit, ItemSet)) else _items(o)
    m = x.shape[0]
    if m < 2:
        raise ShiftBenchError(f"cannot split a set of {m} item(s)")
    k = int(rng.integers(1, m))
    perm = rng.permutation(m)
    v_idx, w_idx = np.sort(perm[:k]), np.sort(perm[k:])
    return ItemSet(x[v_idx]), ItemSet(x[w_idx])


def build_fitnb_tasks(outfits: Sequence[Outfit], K: int, rng: np.random.Generator) -> List[MatchingTask]:
    """One Fill-In-The-N-Blank task per outfit.

    Negatives are the ``W`` halves of ``K - 1`` other outfits drawn uniformly
    without replacement; the correct candidate's position is uniform.
    """
    n = len(outfits)
    if K < 2:
        raise ShiftBenchError("K must be >= 2")
    if n < K:
        raise DataError(f"need at least K={K} outfits, got {n}")
    tasks = []
    for i, o in enumerate(outfits):
        v, w = split_outfit(o, rng)
        others = rng.choice(n - 1, size=K - 1, replace=False)
        others = others + (others >= i)
        negatives = [split_outfit(outfits[j], rng)[1] for j in others]
        pos = int(rng.integers(K))
        negatives.insert(pos, w)
        tasks.append(MatchingTask(v, tuple(negatives), pos))
    return tasks


# ---------------------------------------------------------------------------
# Batched forward/backward over ragged sets
# ---------------------------------------------------------------------------


class _Packed(NamedTuple):
    x: np.ndarray        # (N, d) all items, set by set
    starts: np.ndarray   # (S,) first row of each set
    counts: np.ndarray   # (S,)
    seg: np.ndarray      # (N,) set index of each row


def _pack(sets: Sequence) -> _Packed:
    arrays = [s.items if isinstance(s, (ItemSet, Outfit)) else _items(s) for s in sets]
    counts = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    seg = np.repeat(np.arange(len(arrays)), counts)
    return _Packed(np.vstack(arrays), starts, counts, seg)


def _forward(params: SetScorerParams, packed: _Packed):
    h = np.tanh(packed.x @ params.proj + params.bias)
    emb = np.add.reduceat(h, packed.starts, axis=0) / packed.counts[:, None]
    return emb, h


def _backward(params: SetScorerParams, packed: _Packed, h: np.ndarray, d_emb: np.ndarray):
    dz = (d_emb / packed.counts[:, None])[packed.seg] * (1.0 - h**2)
    return packed.x.T @ dz, dz.sum(axis=0)


def tuple_loss_and_grad(
    params: SetScorerParams,
    v_sets: Sequence,
    w_sets: Sequence,
    K: int,
    pair_probs: Optional[np.ndarray] = None,
):
    """Mean K-pair-set loss over ``B = len(v_sets) // K`` tuples and its gradient.

    ``v_sets[b*K + i]`` and ``w_sets[b*K + i]`` form the ``i``-th matching
    pair of tuple ``b``. ``pair_probs`` (length ``B*K``) switches to the
    weighted loss. Returns ``(loss, grad_proj, grad_bias)``.
    """
    n_sets = len(v_sets)
    if n_sets != len(w_sets) or n_sets % K or n_sets == 0:
        raise ShiftBenchError("v_sets and w_sets must hold the same whole number of K-tuples")
    B = n_sets // K
    pv, pw = _pack(v_sets), _pack(w_sets)
    ev, hv = _forward(params, pv)
    ew, hw = _forward(params, pw)
    ev3, ew3 = ev.reshape(B, K, -1), ew.reshape(B, K, -1)
    scores = np.einsum("bie,bje->bij", ev3, ew3)
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite score")
    lse = logsumexp(scores, axis=2, keepdims=True)
    diag = np.diagonal(scores, axis1=1, axis2=2) - lse[:, :, 0]
    c = np.ones((B, K)) if pair_probs is None else np.exp(np.asarray(pair_probs, float).reshape(B, K))
    loss = float(-np.mean(c * diag))
    # d loss / d scores[b, i, k] = c_bi (softmax_bik - delta_ik) / (B K)
    d_scores = np.exp(scores - lse)
    d_scores[:, np.arange(K), np.arange(K)] -= 1.0
    d_scores *= (c / (B * K))[:, :, None]
    d_ev = np.einsum("bij,bje->bie", d_scores, ew3).reshape(B * K, -1)
    d_ew = np.einsum("bij,bie->bje", d_scores, ev3).reshape(B * K, -1)
    gp_v, gb_v = _backward(params, pv, hv, d_ev)
    gp_w, gb_w = _backward(params, pw, hw, d_ew)
    return loss, gp_v + gp_w, gb_v + gb_w


@dataclass(frozen=True)
class MatchingWeighting:
    """Importance weighting for matching: strategy plus per-item ``p(test | x)``.

    ``item_probability`` maps an ``(n, d)`` item matrix to ``n`` scores; with
    ``lenient=True`` aggregated values outside ``[0, 1]`` are clipped rather
    than rejected.
    """

    strategy: IWStrategy
    item_probability: Callable[[np.ndarray], np.ndarray]
    lenient: bool = False

    def outfit_probabilities(self, outfits: Sequence[Outfit]) -> np.ndarray:
        packed = _pack(outfits)
        item_p = np.asarray(self.item_probability(packed.x), dtype=float).reshape(-1)
        if item_p.size != packed.x.shape[0]:
            raise ShiftBenchError("item_probability returned the wrong number of values")
        strategy = IWStrategy(self.strategy)
        agg = np.maximum.reduceat if strategy is IWStrategy.MAX_IW else np.add.reduceat
        p = agg(item_p, packed.starts)
        if strategy is IWStrategy.MEAN_IW:
            p = p / packed.counts
        return _check_probs(p, p.size, self.lenient)


def _epoch_tuples(n: int, K: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(n)
    usable = (n // K) * K
    return order[:usable].reshape(-1, K)


def train_matcher(
    outfits: Sequence[Outfit],
    K: int,
    gd: GdConfig = MATCHING_GD,
    weighting: Optional[MatchingWeighting] = None,
    embed_dim: int = DEFAULT_EMBED_DIM,
    history: Optional[list] = None,
) -> SetScorerParams:
    """Seeded SGD on the K-pair-set loss over random outfit halvings.

    Every epoch reshuffles the outfits into K-tuples, re-splits each outfit
    into ``(V, W)`` and takes one step per ``gd.batch_size`` tuples. With
    ``weighting`` each pair's term is scaled by ``exp(p_i)`` where ``p_i``
    aggregates the per-item test probabilities over the whole outfit (the
    union of its two halves). If ``history`` is a list, the loss on a fixed
    seeded set of tuples is appended before training and after each epoch.
    """
    n = len(outfits)
    if n == 0:
        raise DataError("no outfits to train on")
    if n < K:
        raise DataError(f"need at least K={K} outfits, got {n}")
    d = outfits[0].items.shape[1]
    rng = np.random.default_rng(gd.seed)
    params = init_params(d, embed_dim, int(rng.integers(2**63)))
    probs = None if weighting is None else weighting.outfit_probabilities(outfits)

    if history is not None:
        probe_rng = np.random.default_rng([gd.seed, 1])
        probe = _epoch_tuples(n, K, probe_rng).reshape(-1)
        probe_halves = [split_outfit(outfits[j], probe_rng) for j in probe]
        probe_p = None if probs is None else probs[probe]

        def record():
            loss, _, _ = tuple_loss_and_grad(
                params, [h[0] for h in probe_halves], [h[1] for h in probe_halves], K, probe_p
            )
            history.append(loss)

        record()

    proj, bias = np.array(params.proj), np.array(params.bias)
    for epoch in range(gd.epochs):
        tuples = _epoch_tuples(n, K, rng)
        for start in range(0, tuples.shape[0], gd.batch_size):
            idx = tuples[start:start + gd.batch_size].reshape(-1)
            halves = [split_outfit(outfits[j], rng) for j in idx]
            _, g_proj, g_bias = tuple_loss_and_grad(
                params, [h[0] for h in halves], [h[1] for h in halves], K,
                None if probs is None else probs[idx],
            )
            proj -= gd.learning_rate * g_proj
            bias -= gd.learning_rate * g_bias
            params = SetScorerParams(proj, bias)
        if history is not None:
            record()
    return params


Scorer = Union[SetScorerParams, Callable[[ItemSet, ItemSet], float]]


def evaluate_fitnb(scorer: Scorer, tasks: Sequence[MatchingTask]) -> float:
    """Fraction of tasks whose first-highest-scoring candidate is the correct one."""
    if not tasks:
        raise ShiftBenchError("no tasks to evaluate")
    if not isinstance(scorer, SetScorerParams):
        hits = [
            int(np.argmax([scorer(t.query, c) for c in t.candidates])) == t.correct for t in tasks
        ]
        return float(np.mean(hits))
    hits = 0
    # group by K so every block is rectangular
    by_k = {}
    for t in tasks:
        by_k.setdefault(t.k, []).append(t)
    for K, group in by_k.items():
        q_emb, _ = _forward(scorer, _pack([t.query for t in group]))
        c_emb, _ = _forward(scorer, _pack([c for t in group for c in t.candidates]))
        scores = np.einsum("te,tke->tk", q_emb, c_emb.reshape(len(group), K, -1))
        correct = np.array([t.correct for t in group])
        hits += int(np.sum(np.argmax(scores, axis=1) == correct))
    return hits / len(tasks)
