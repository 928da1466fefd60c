"""Benchmark protocols: target-shift regression, category classification under
covariate shift, Fill-In-The-N-Blank set matching and year discrimination.

Every protocol is a grid of cells evaluated over a list of seeds. A job is
one ``(cell, seed)`` pair whose random stream is derived from
``(random_seed, cell index, seed)`` only, so serial and parallel runs give
identical tables.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import LabeledDataset, ShiftSpec, ShiftType, predict
from .data_io import (
    SyntheticCorpusSpec,
    gen_synthetic_corpus,
    read_features,
    read_records,
    to_labeled_dataset,
    to_outfits,
)
from .errors import DataError, ShiftBenchError
from .learning import GdConfig, fit_weighted_linear, fit_weighted_logistic, predict_class
from .matching import (
    DEFAULT_EMBED_DIM,
    MatchingWeighting,
    build_fitnb_tasks,
    evaluate_fitnb,
    train_matcher,
)
from .metrics import accuracy, auc, mae
from .samplers import sample_covariate_shift_groups, sample_target_shift
from .weights import (
    DEFAULT_BETA,
    DISCRIMINATOR_GD,
    estimate_from_log_densities,
    fit_source_discriminator,
    gaussian_log_densities,
)

__all__ = [
    "PROTOCOLS",
    "Method",
    "parse_method",
    "BenchConfig",
    "ResultTable",
    "synthetic_likes_pool",
    "run_regression_benchmark",
    "run_category_benchmark",
    "run_matching_benchmark",
    "run_year_discrimination",
    "run_benchmark",
]

PROTOCOLS = ("regression_target_shift", "category_covariate_shift", "set_matching", "year_discrimination")
WEIGHTED_ERM = ("erm", "iwerm", "aiwerm", "riwerm")
MATCHING_METHODS = ("erm", "mean_iw", "max_iw")


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    name: str
    alpha: Optional[float] = None

    @property
    def label(self) -> str:
        return self.name if self.alpha is None else f"{self.name}({self.alpha:g})"


_NUM = r"([0-9.eE+-]+)"
_METHOD_RE = re.compile(
    rf"^\s*([a-z_]+)\s*(?:\(\s*(?:alpha\s*=\s*)?{_NUM}\s*\)|:\s*{_NUM})?\s*$"
)


def parse_method(text: str) -> Method:
    """Parse ``erm``, ``iwerm``, ``aiwerm(0.5)``, ``riwerm(alpha=0.75)``, ``mean_iw``, ``max_iw``."""
    m = _METHOD_RE.match(text.lower())
    if not m:
        raise ShiftBenchError(f"cannot parse method {text!r}")
    name, alpha = m.group(1), m.group(2) or m.group(3)
    if name not in WEIGHTED_ERM + MATCHING_METHODS:
        raise ShiftBenchError(f"unknown method {name!r}")
    if name in ("aiwerm", "riwerm"):
        if alpha is None:
            raise ShiftBenchError(f"{name} needs an alpha, e.g. {name}(0.5)")
        try:
            a = float(alpha)
        except ValueError:
            raise ShiftBenchError(f"cannot parse alpha in {text!r}") from None
        if not 0.0 <= a <= 1.0:
            raise ShiftBenchError(f"alpha must lie in [0, 1], got {a}")
        return Method(name, a)
    if alpha is not None:
        raise ShiftBenchError(f"{name} takes no alpha")
    return Method(name)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    """Everything a protocol run needs; echoed verbatim into the metadata sidecar.

    Data come from ``records``/``features`` files when given, otherwise from
    the synthetic generators (``synthetic`` overrides fields of
    :class:`~shiftbench.data_io.SyntheticCorpusSpec`).
    """

    protocol: str
    methods: Tuple[str, ...] = ()
    seeds: Tuple[int, ...] = (0, 1, 2)
    random_seed: int = 0
    output: Optional[str] = None
    jobs: int = 1
    # data
    records: Optional[str] = None
    features: Optional[str] = None
    synthetic: Tuple[Tuple[str, object], ...] = ()
    # weighting
    weight_source: Optional[str] = None
    normalize_weights: bool = False
    beta: float = DEFAULT_BETA
    # regression
    target_shift: bool = True
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    train_mu: float = 40.0
    train_sigma: float = 10.0
    test_mu: Optional[float] = None
    test_sigma: float = 10.0
    w_buckets: Tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    w_scale: float = 1.0
    w_tolerance: float = 5.0
    pool_size: int = 20000
    ridge: float = 1e-8
    # grouped protocols
    years: Tuple[int, ...] = ()
    val_size: int = 500
    learning_rate: Optional[float] = None
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    # matching
    k_values: Tuple[int, ...] = (4, 8)
    embed_dim: int = DEFAULT_EMBED_DIM
    holdout_fraction: float = 0.2
    # year discrimination
    anchor_year: Optional[int] = None
    per_side: int = 2000

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ShiftBenchError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        methods = tuple(self.methods) or self.default_methods(self.protocol)
        parsed = [parse_method(m) for m in methods]
        allowed = MATCHING_METHODS if self.protocol == "set_matching" else WEIGHTED_ERM
        for m in parsed:
            if self.protocol != "year_discrimination" and m.name not in allowed:
                raise ShiftBenchError(f"method {m.label} is not available for {self.protocol}")
        object.__setattr__(self, "methods", tuple(m.label for m in parsed))
        if not self.seeds:
            raise ShiftBenchError("at least one seed is required")
        for name in ("seeds", "w_buckets", "years", "k_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if isinstance(self.synthetic, dict):
            object.__setattr__(self, "synthetic", tuple(sorted(self.synthetic.items())))
        category = self.protocol == "category_covariate_shift"
        if self.train_size is None:
            object.__setattr__(self, "train_size", 3500 if category else 1000)
        if self.test_size is None:
            object.__setattr__(self, "test_size", 500 if category else 1000)
        if self.weight_source is None:
            default = "true_ratio" if self.protocol == "regression_target_shift" else "discriminator"
            object.__setattr__(self, "weight_source", default)
        if self.weight_source not in ("true_ratio", "gaussian_fit", "discriminator"):
            raise ShiftBenchError(f"unknown weight source {self.weight_source!r}")
        if self.weight_source == "true_ratio" and self.protocol != "regression_target_shift":
            raise ShiftBenchError("true_ratio weights exist only for the regression protocol")
        if self.jobs < 1:
            raise ShiftBenchError("jobs must be >= 1")
        if any(k < 2 for k in self.k_values):
            raise ShiftBenchError("K must be >= 2")

    @staticmethod
    def default_methods(protocol: str) -> Tuple[str, ...]:
        if protocol == "regression_target_shift":
            return ("erm", "iwerm", "riwerm(0.25)", "riwerm(0.5)", "riwerm(0.75)")
        if protocol == "set_matching":
            return MATCHING_METHODS
        if protocol == "year_discrimination":
            return ()
        return ("erm", "iwerm", "aiwerm(0.5)")

    def method_objects(self) -> List[Method]:
        return [parse_method(m) for m in self.methods]

    def gd(self, default: GdConfig) -> GdConfig:
        return GdConfig(
            self.learning_rate if self.learning_rate is not None else default.learning_rate,
            self.epochs if self.epochs is not None else default.epochs,
            self.batch_size if self.batch_size is not None else default.batch_size,
        )

    def corpus_spec(self) -> SyntheticCorpusSpec:
        kw = dict(self.synthetic)
        kw.setdefault("seed", self.random_seed)
        unknown = set(kw) - {f.name for f in dataclasses.fields(SyntheticCorpusSpec)}
        if unknown:
            raise ShiftBenchError(f"unknown synthetic corpus settings {sorted(unknown)}")
        for key in ("items_per_outfit", "years", "family_share"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return SyntheticCorpusSpec(**kw)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["synthetic"] = dict(self.synthetic)
        return d


CATEGORY_GD = GdConfig(learning_rate=0.005, epochs=10, batch_size=32)
MATCHING_BENCH_GD = GdConfig(learning_rate=0.001, epochs=32, batch_size=32)


# ---------------------------------------------------------------------------
# Result tables
# ---------------------------------------------------------------------------


@dataclass
class ResultTable:
    """Long-form results: one row per (cell, method) with mean/std over seeds."""

    protocol: str
    key_columns: Tuple[str, ...]
    value_columns: Tuple[str, ...]
    rows: List[dict] = field(default_factory=list)

    def columns(self) -> List[str]:
        cols = list(self.key_columns)
        for v in self.value_columns:
            cols += [f"{v}_mean", f"{v}_std"]
        return cols + ["n_seeds"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns())
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns()])
        return buf.getvalue()

    def cell(self, **keys) -> dict:
        hits = [r for r in self.rows if all(r[k] == v for k, v in keys.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {keys}")
        return hits[0]

    def pivot(self, row_key: str, col_key: str, value: str) -> str:
        """Human-readable ``mean(±std)`` grid, e.g. methods x W buckets."""
        row_vals = list(dict.fromkeys(r[row_key] for r in self.rows))
        col_vals = list(dict.fromkeys(r[col_key] for r in self.rows))
        lines = ["\t".join([row_key] + [f"{col_key}={c}" for c in col_vals])]
        for rv in row_vals:
            cells = []
            for cv in col_vals:
                hit = [r for r in self.rows if r[row_key] == rv and r[col_key] == cv]
                cells.append(
                    f"{hit[0][value + '_mean']:.3f}(±{hit[0][value + '_std']:.3f})" if hit else "-"
                )
            lines.append("\t".join([str(rv)] + cells))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def _aggregate(table: ResultTable, keyed_samples: Dict[tuple, Dict[str, List[float]]]):
    for key, metrics in keyed_samples.items():
        row = dict(zip(table.key_columns, key))
        n = None
        for v in table.value_columns:
            vals = np.asarray(metrics[v], dtype=float)
            row[f"{v}_mean"] = float(vals.mean())
            row[f"{v}_std"] = float(vals.std())
            n = vals.size
        row["n_seeds"] = n
        table.rows.append(row)
    return table


def _job_rng(cfg: BenchConfig, cell: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.random_seed, cell, seed]))


def _sub_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**63))


def _run_jobs(fn, cfg: BenchConfig, data, cells: Sequence) -> List[list]:
    """Evaluate ``fn(cfg, data, cell_index, cell, seed)`` for every cell and seed, in order."""
    jobs = [(ci, cell, seed) for ci, cell in enumerate(cells) for seed in cfg.seeds]
    if cfg.jobs == 1 or len(jobs) == 1:
        results = [fn(cfg, data, ci, cell, seed) for ci, cell, seed in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(fn, cfg, data, ci, cell, seed) for ci, cell, seed in jobs]
            results = [f.result() for f in futures]
    per_cell = [[] for _ in cells]
    for (ci, _, _), res in zip(jobs, results):
        per_cell[ci].append(res)
    return per_cell


# ---------------------------------------------------------------------------
# Weighting shared by the weighted-ERM protocols
# ---------------------------------------------------------------------------


def _method_weights(method: Method, log_te, log_tr, cfg: BenchConfig):
    if method.name == "erm":
        return None
    transform = {"iwerm": "iw", "aiwerm": "aiw", "riwerm": "riw"}[method.name]
    est = estimate_from_log_densities(
        log_te, log_tr, transform, method.alpha or 0.0, cfg.weight_source, cfg.normalize_weights
    )
    return est.weights


def _discriminator_logs(train_x, test_x, query_x, cfg: BenchConfig, seed: int):
    gd = dataclasses.replace(DISCRIMINATOR_GD, seed=seed)
    disc = fit_source_discriminator(train_x, test_x, cfg.beta, gd)
    p_te, p_tr = disc.densities(query_x)
    with np.errstate(divide="ignore"):
        return np.log(p_te), np.log(p_tr)


# ---------------------------------------------------------------------------
# Regression under target shift
# ---------------------------------------------------------------------------


def synthetic_likes_pool(n: int = 20000, d: int = 3, y_max: float = 150.0,
                         noise: float = 15.0, seed: int = 0) -> LabeledDataset:
    """Pool with ``y ~ U(0, y_max)`` and ``d`` noisy copies of ``y`` as features.

    Each feature is ``y + noise * sqrt(d) * N(0, 1)``, so the feature mean has
    noise ``noise`` whatever ``d`` is. ``x`` depends on the row only through
    ``y``, so resampling on ``y`` is a pure target shift.
    """
    rng = np.random.default_rng(seed)
    y = rng.uniform(0.0, y_max, n)
    x = y[:, None] + noise * np.sqrt(d) * rng.standard_normal((n, d))
    return LabeledDataset(x, y)


def _regression_data(cfg: BenchConfig) -> LabeledDataset:
    if cfg.records:
        return to_labeled_dataset(read_records(cfg.records), "likes", "price_stats")
    kw = dict(cfg.synthetic)
    allowed = {"n", "d", "y_max", "noise"}
    unknown = set(kw) - allowed - {"seed"}
    if unknown:
        raise ShiftBenchError(f"unknown synthetic pool settings {sorted(unknown)}")
    kw.setdefault("n", cfg.pool_size)
    kw.setdefault("seed", cfg.random_seed)
    return synthetic_likes_pool(**kw)


def _regression_cells(cfg: BenchConfig) -> List[float]:
    if not cfg.target_shift:
        return [0.0]
    if cfg.test_mu is not None:
        return [abs(cfg.test_mu - cfg.train_mu) / cfg.w_scale]
    return list(cfg.w_buckets)


def _regression_job(cfg: BenchConfig, pool: LabeledDataset, ci: int, bucket: float, seed: int):
    rng = _job_rng(cfg, ci, seed)
    shift = bucket * cfg.w_scale
    if cfg.test_mu is not None and cfg.target_shift:
        test_mu, test_sigma = cfg.test_mu, cfg.test_sigma
    elif cfg.target_shift:
        test_mu, test_sigma = cfg.train_mu + shift, cfg.test_sigma
    else:
        test_mu, test_sigma = cfg.train_mu, cfg.train_sigma
    spec = ShiftSpec(
        ShiftType.TARGET if cfg.target_shift and shift > 0 else ShiftType.NONE,
        train_mu=cfg.train_mu, train_sigma=cfg.train_sigma, test_mu=test_mu,
        test_sigma=test_sigma, seed=_sub_seed(rng),
    )
    try:
        pair = sample_target_shift(pool, spec, cfg.train_size, cfg.test_size)
    except DataError as exc:
        raise DataError(f"W bucket {bucket:g}: {exc}") from None
    if abs(pair.realized_magnitude - shift) > cfg.w_tolerance * cfg.w_scale:
        raise DataError(
            f"W bucket {bucket:g} unreachable from the pool: realized magnitude "
            f"{pair.realized_magnitude:.3f} vs requested {shift:.3f}"
        )
    if cfg.weight_source == "true_ratio":
        log_te, log_tr = pair.densities.log_densities(pair.train)
    elif cfg.weight_source == "gaussian_fit":
        log_te, log_tr = gaussian_log_densities(pair.train.targets, pair.test.targets, pair.train.targets)
    else:
        log_te, log_tr = _discriminator_logs(
            pair.train.features, pair.test.features, pair.train.features, cfg, _sub_seed(rng)
        )
    out = {"realized_w": pair.realized_magnitude}
    for method in cfg.method_objects():
        w = _method_weights(method, log_te, log_tr, cfg)
        h = fit_weighted_linear(pair.train, w, cfg.ridge)
        out[method.label] = mae(predict(h, pair.test.features), pair.test.targets)
    return out


def run_regression_benchmark(cfg: BenchConfig) -> ResultTable:
    """Test MAE of weighted linear regression per method and shift bucket."""
    if cfg.protocol != "regression_target_shift":
        raise ShiftBenchError("config protocol must be regression_target_shift")
    pool = _regression_data(cfg)
    cells = _regression_cells(cfg)
    per_cell = _run_jobs(_regression_job, cfg, pool, cells)
    table = ResultTable(cfg.protocol, ("method", "w_bucket"), ("mae", "realized_w"))
    samples = {}
    for bucket, results in zip(cells, per_cell):
        for m in cfg.methods:
            samples[(m, float(bucket))] = {
                "mae": [r[m] for r in results], "realized_w": [r["realized_w"] for r in results],
            }
    return _aggregate(table, samples)


# ---------------------------------------------------------------------------
# Grouped corpora (category, matching, year discrimination)
# ---------------------------------------------------------------------------


def _corpus(cfg: BenchConfig):
    """``(records, feature_table)`` from files or the synthetic generator."""
    if cfg.records:
        if not cfg.features:
            raise DataError("this protocol needs --features alongside --records")
        return read_records(cfg.records), read_features(cfg.features)
    corpus = gen_synthetic_corpus(cfg.corpus_spec())
    return corpus.records, corpus.features


def _years(cfg: BenchConfig, available: Sequence[int]) -> List[int]:
    years = list(cfg.years) or sorted(set(available))
    missing = [y for y in years if y not in set(available)]
    if missing:
        raise DataError(f"group(s) {missing} have no data")
    return years


def _category_job(cfg: BenchConfig, data, ci: int, cell, seed: int):
    pool, n_classes = data
    train_year, test_year = cell
    rng = _job_rng(cfg, ci, seed)
    pair = sample_covariate_shift_groups(
        pool, [train_year], [test_year], cfg.train_size + cfg.val_size, cfg.test_size, _sub_seed(rng)
    )
    order = rng.permutation(pair.train.n)
    train = pair.train.subset(np.sort(order[: cfg.train_size]))
    val = pair.train.subset(np.sort(order[cfg.train_size:]))
    if cfg.weight_source == "discriminator":
        log_te, log_tr = _discriminator_logs(
            train.features, pair.test.features, train.features, cfg, _sub_seed(rng)
        )
    else:
        log_te, log_tr = gaussian_log_densities(train.features, pair.test.features, train.features)
    gd = dataclasses.replace(cfg.gd(CATEGORY_GD), seed=_sub_seed(rng))
    out = {}
    for method in cfg.method_objects():
        w = _method_weights(method, log_te, log_tr, cfg)
        h = fit_weighted_logistic(train, w, gd, n_classes=n_classes)
        out[method.label] = (
            accuracy(predict_class(h, pair.test.features), pair.test.targets),
            accuracy(predict_class(h, val.features), val.targets) if val.n else float("nan"),
        )
    return out


def run_category_benchmark(cfg: BenchConfig) -> ResultTable:
    """Test accuracy of weighted softmax regression for every (train year, test year) pair."""
    if cfg.protocol != "category_covariate_shift":
        raise ShiftBenchError("config protocol must be category_covariate_shift")
    records, table = _corpus(cfg)
    pool = to_labeled_dataset(records, "category1", table)
    n_classes = int(pool.targets.max()) + 1
    years = _years(cfg, np.unique(pool.group_keys).tolist())
    cells = [(a, b) for a in years for b in years]
    per_cell = _run_jobs(_category_job, cfg, (pool, n_classes), cells)
    result = ResultTable(cfg.protocol, ("method", "train_group", "test_group"), ("accuracy", "val_accuracy"))
    samples = {}
    for (a, b), results in zip(cells, per_cell):
        for m in cfg.methods:
            samples[(m, a, b)] = {
                "accuracy": [r[m][0] for r in results], "val_accuracy": [r[m][1] for r in results],
            }
    return _aggregate(result, samples)


def _matching_job(cfg: BenchConfig, data, ci: int, K: int, seed: int):
    by_year, years = data
    rng = _job_rng(cfg, ci, seed)
    train_year = years[0]
    outfits = by_year[train_year]
    order = rng.permutation(len(outfits))
    n_hold = int(round(cfg.holdout_fraction * len(outfits)))
    held = [outfits[i] for i in np.sort(order[:n_hold])]
    train = [outfits[i] for i in np.sort(order[n_hold:])]
    gd = dataclasses.replace(cfg.gd(MATCHING_BENCH_GD), seed=_sub_seed(rng))
    train_items = np.vstack([o.items for o in train])
    erm = train_matcher(train, K, gd, embed_dim=cfg.embed_dim)
    methods = cfg.method_objects()
    out = {}
    for year in years:
        eval_outfits = held if year == train_year else by_year[year]
        tasks = build_fitnb_tasks(eval_outfits, K, _job_rng(cfg, ci, seed * 7919 + year))
        erm_acc = evaluate_fitnb(erm, tasks)
        disc = None
        for m in methods:
            if m.name == "erm" or year == train_year:
                # no shift to adapt to on the training year: p(test|.) = 0 and the loss reduces to ERM
                out[(m.label, year)] = erm_acc
                continue
            if disc is None:
                disc_gd = dataclasses.replace(DISCRIMINATOR_GD, seed=_sub_seed(rng))
                disc = fit_source_discriminator(
                    train_items, np.vstack([o.items for o in eval_outfits]), cfg.beta, disc_gd
                )
            params = train_matcher(
                train, K, gd, MatchingWeighting(m.name, disc.test_probability), embed_dim=cfg.embed_dim
            )
            out[(m.label, year)] = evaluate_fitnb(params, tasks)
    return out


def run_matching_benchmark(cfg: BenchConfig) -> ResultTable:
    """Fill-In-The-N-Blank accuracy per method, evaluation year and K.

    Models are trained on the earliest year (a held-out fraction of it is
    kept for that year's column) and evaluated on every year; negatives are
    drawn from the evaluation year. Importance-weighted variants fit a
    source discriminator between training-year items and evaluation-year
    items and use ``1 - g(x)`` as the per-item test probability.
    """
    if cfg.protocol != "set_matching":
        raise ShiftBenchError("config protocol must be set_matching")
    records, table = _corpus(cfg)
    outfits = to_outfits(records, table)
    years = _years(cfg, [o.year for o in outfits])
    by_year = {y: [o for o in outfits if o.year == y] for y in years}
    cells = list(cfg.k_values)
    per_cell = _run_jobs(_matching_job, cfg, (by_year, years), cells)
    result = ResultTable(cfg.protocol, ("method", "k", "year"), ("accuracy",))
    samples = {}
    for K, results in zip(cells, per_cell):
        for m in cfg.methods:
            for y in years:
                samples[(m, K, y)] = {"accuracy": [r[(m, y)] for r in results]}
    return _aggregate(result, samples)


def _yeardisc_job(cfg: BenchConfig, data, ci: int, year: int, seed: int):
    by_year, anchor = data
    rng = _job_rng(cfg, ci, seed)
    a_items = by_year[anchor]
    if year == anchor:
        idx = rng.permutation(a_items.shape[0])
        half = min(cfg.per_side, a_items.shape[0] // 2)
        if half < 2:
            raise DataError(f"year {anchor} has too few items to split")
        first, second = a_items[idx[:half]], a_items[idx[half:2 * half]]
    else:
        o_items = by_year[year]
        n = min(cfg.per_side, a_items.shape[0], o_items.shape[0])
        first = a_items[rng.choice(a_items.shape[0], n, replace=False)]
        second = o_items[rng.choice(o_items.shape[0], n, replace=False)]
    n = first.shape[0]
    cut = n // 2
    p1, p2 = rng.permutation(n), rng.permutation(n)
    gd = dataclasses.replace(DISCRIMINATOR_GD, seed=_sub_seed(rng))
    disc = fit_source_discriminator(first[p1[:cut]], second[p2[:cut]], cfg.beta, gd)
    held_x = np.vstack([first[p1[cut:]], second[p2[cut:]]])
    held_s = np.concatenate([np.ones(n - cut, np.int64), np.zeros(n - cut, np.int64)])
    g = disc.raw_proba(held_x)
    return {"accuracy": accuracy((g > 0.5).astype(np.int64), held_s), "auc": auc(g, held_s)}


def run_year_discrimination(cfg: BenchConfig) -> ResultTable:
    """Held-out accuracy/AUC of an anchor-year vs other-year item discriminator."""
    if cfg.protocol != "year_discrimination":
        raise ShiftBenchError("config protocol must be year_discrimination")
    records, table = _corpus(cfg)
    years = _years(cfg, [r.year for r in records])
    anchor = cfg.anchor_year if cfg.anchor_year is not None else years[0]
    if anchor not in years:
        raise DataError(f"anchor year {anchor} has no data")
    by_year = {
        y: table.rows([i.item_id for r in records if r.year == y for i in r.items]).astype(float)
        for y in years
    }
    per_cell = _run_jobs(_yeardisc_job, cfg, (by_year, anchor), years)
    result = ResultTable(cfg.protocol, ("anchor", "year", "gap"), ("accuracy", "auc"))
    samples = {}
    for y, results in zip(years, per_cell):
        samples[(anchor, y, abs(y - anchor))] = {
            "accuracy": [r["accuracy"] for r in results], "auc": [r["auc"] for r in results],
        }
    return _aggregate(result, samples)


_RUNNERS = {
    "regression_target_shift": run_regression_benchmark,
    "category_covariate_shift": run_category_benchmark,
    "set_matching": run_matching_benchmark,
    "year_discrimination": run_year_discrimination,
}


def input_digest(cfg: BenchConfig) -> str:
    """SHA-256 over the input files, or over the synthetic settings when there are none."""
    h = hashlib.sha256()
    paths = [p for p in (cfg.records, cfg.features) if p]
    if cfg.features:
        paths.append(cfg.features + ".json")
    if paths:
        for p in paths:
            h.update(Path(p).read_bytes())
    else:
        h.update(json.dumps({"synthetic": dict(cfg.synthetic), "random_seed": cfg.random_seed},
                            sort_keys=True, default=str).encode())
    return h.hexdigest()


def run_benchmark(cfg: BenchConfig, write: bool = True) -> ResultTable:
    """Run the configured protocol; write the CSV and a JSON metadata sidecar when ``cfg.output`` is set."""
    table = _RUNNERS[cfg.protocol](cfg)
    if write and cfg.output:
        out = Path(cfg.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table.to_csv(), encoding="utf-8")
        meta = {
            "protocol": cfg.protocol,
            "config": cfg.to_json(),
            "seeds": list(cfg.seeds),
            "input_sha256": input_digest(cfg),
            "columns": table.columns(),
        }
        Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return table
