"""Outfit record I/O, per-year statistics, dataset conversion and synthetic corpora.

Records are stored one JSON object per line::

    {"set_id": 1, "items": [{"item_id": 10, "category_id1": 1,
      "category_id2": 11, "price": 3900}, ...],
     "user": {"user_id": 7, "fav_brand_ids": [3, 9]},
     "like_num": 12, "publish_date": "2014-05-01"}

Item image features live in a separate little-endian float32 matrix file
(row-major) with a JSON sidecar holding the dimension and the item id of
every row.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .core import LabeledDataset
from .errors import DataError
from .matching import Outfit

__all__ = [
    "Item",
    "OutfitRecord",
    "YearStats",
    "YearlyStats",
    "FeatureTable",
    "RecordWarning",
    "parse_records",
    "read_records",
    "serialize_records",
    "write_records",
    "yearly_stats",
    "write_stats_csv",
    "price_stats",
    "encode_labels",
    "to_labeled_dataset",
    "to_outfits",
    "write_features",
    "read_features",
    "SyntheticCorpusSpec",
    "SyntheticCorpus",
    "gen_synthetic_corpus",
]

COLLECTION_START = dt.date(2010, 1, 1)
COLLECTION_END = dt.date(2020, 4, 6)
MIN_ITEMS = 4


class RecordWarning(UserWarning):
    """A record violates a datasheet rule (too few items, negative price, date out of window)."""


@dataclass(frozen=True)
class Item:
    item_id: int
    category_id1: int
    category_id2: int
    price: int


@dataclass(frozen=True)
class OutfitRecord:
    set_id: int
    items: Tuple[Item, ...]
    user_id: int
    like_num: int
    publish_date: dt.date
    fav_brand_ids: Tuple[int, ...] = ()
    user_extra: Tuple[Tuple[str, object], ...] = ()

    @property
    def year(self) -> int:
        return self.publish_date.year

    def to_json(self) -> dict:
        user = {"user_id": self.user_id, "fav_brand_ids": list(self.fav_brand_ids)}
        user.update(dict(self.user_extra))
        return {
            "set_id": self.set_id,
            "items": [
                {"item_id": i.item_id, "category_id1": i.category_id1,
                 "category_id2": i.category_id2, "price": i.price}
                for i in self.items
            ],
            "user": user,
            "like_num": self.like_num,
            "publish_date": self.publish_date.isoformat(),
        }


def _int(obj, key, lineno, where="record"):
    if key not in obj:
        raise DataError(f"line {lineno}: missing field '{key}' in {where}")
    val = obj[key]
    # the public dump stores numbers as strings
    if isinstance(val, bool):
        raise DataError(f"line {lineno}: field '{key}' must be an integer, got {val!r}")
    if isinstance(val, int):
        return val
    if isinstance(val, str) and val.strip().lstrip("-").isdigit():
        return int(val)
    if isinstance(val, float) and val.is_integer():
        return int(val)
    raise DataError(f"line {lineno}: field '{key}' must be an integer, got {val!r}")


def _int_list(val, key, lineno):
    if val is None or val == "":
        return ()
    if isinstance(val, str):
        val = [v for v in val.replace(",", " ").split()]
    if not isinstance(val, list):
        raise DataError(f"line {lineno}: field '{key}' must be a list of integers")
    return tuple(_int({key: v}, key, lineno) for v in val)


def _record_from_obj(obj, lineno: int, strict: bool) -> OutfitRecord:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    set_id = _int(obj, "set_id", lineno)
    if "items" not in obj:
        raise DataError(f"line {lineno}: missing field 'items'")
    raw_items = obj["items"]
    if not isinstance(raw_items, list):
        raise DataError(f"line {lineno}: field 'items' must be a list")
    items = []
    for j, it in enumerate(raw_items):
        if not isinstance(it, dict):
            raise DataError(f"line {lineno}: field 'items[{j}]' must be an object")
        where = f"items[{j}]"
        items.append(Item(
            _int(it, "item_id", lineno, where), _int(it, "category_id1", lineno, where),
            _int(it, "category_id2", lineno, where), _int(it, "price", lineno, where),
        ))
    if "user" not in obj:
        raise DataError(f"line {lineno}: missing field 'user'")
    user = obj["user"]
    if isinstance(user, dict):
        uid_key = "user_id" if "user_id" in user else "id"
        user_id = _int(user, uid_key, lineno, "user")
        favs = _int_list(user.get("fav_brand_ids"), "fav_brand_ids", lineno)
        extra = tuple(sorted(
            (k, v) for k, v in user.items() if k not in ("user_id", "id", "fav_brand_ids")
        ))
    else:
        user_id = _int(obj, "user", lineno)
        favs, extra = (), ()
    like_num = _int(obj, "like_num", lineno)
    if like_num < 0:
        raise DataError(f"line {lineno}: field 'like_num' must be >= 0")
    if "publish_date" not in obj:
        raise DataError(f"line {lineno}: missing field 'publish_date'")
    try:
        date = dt.date.fromisoformat(str(obj["publish_date"])[:10])
    except ValueError:
        raise DataError(f"line {lineno}: field 'publish_date' is not an ISO date: {obj['publish_date']!r}")

    problems = []
    if len(items) < MIN_ITEMS:
        problems.append(f"{len(items)} items (< {MIN_ITEMS})")
    if any(i.price < 0 for i in items):
        problems.append("negative price")
    if not COLLECTION_START <= date <= COLLECTION_END:
        problems.append(f"publish_date {date} outside the collection window")
    for p in problems:
        msg = f"line {lineno}: set_id {set_id}: {p}"
        if strict:
            raise DataError(msg)
        warnings.warn(msg, RecordWarning, stacklevel=4)
    return OutfitRecord(set_id, tuple(items), user_id, like_num, date, favs, extra)


def parse_records(stream: Union[TextIO, Iterable[str]], strict: bool = False) -> List[OutfitRecord]:
    """Parse line-delimited JSON records, preserving order.

    Blank lines are skipped and unknown fields ignored. Datasheet rule
    violations emit :class:`RecordWarning` and keep the record, unless
    ``strict`` is set, in which case they raise :class:`DataError`.
    """
    records = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: malformed record ({exc.msg} at column {exc.colno})") from None
        records.append(_record_from_obj(obj, lineno, strict))
    return records


def read_records(path, strict: bool = False) -> List[OutfitRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh, strict=strict)


def serialize_records(records: Iterable[OutfitRecord]) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)


def write_records(records: Iterable[OutfitRecord], path) -> None:
    Path(path).write_text(serialize_records(records), encoding="utf-8")


@dataclass(frozen=True)
class YearStats:
    instances: int
    items: int
    mean_likes: float
    median_likes: float


def _lower_median(values: Sequence[int]) -> float:
    v = sorted(values)
    return float(v[(len(v) - 1) // 2])


@dataclass(frozen=True)
class YearlyStats:
    """Per-year instance/item counts and like statistics (lower median)."""

    per_year: Dict[int, YearStats]
    total: YearStats

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["year", "instances", "items", "mean_likes", "median_likes"])
        rows = [(str(y), s) for y, s in sorted(self.per_year.items())] + [("total", self.total)]
        for label, s in rows:
            writer.writerow([label, s.instances, s.items, f"{s.mean_likes:.2f}", f"{s.median_likes:.2f}"])
        return buf.getvalue()


def _summarize(records: Sequence[OutfitRecord]) -> YearStats:
    likes = [r.like_num for r in records]
    return YearStats(
        len(records), sum(len(r.items) for r in records),
        float(np.mean(likes)) if likes else 0.0, _lower_median(likes) if likes else 0.0,
    )


def yearly_stats(records: Sequence[OutfitRecord]) -> YearlyStats:
    if not records:
        raise DataError("no records")
    by_year: Dict[int, List[OutfitRecord]] = {}
    for r in records:
        by_year.setdefault(r.year, []).append(r)
    return YearlyStats({y: _summarize(rs) for y, rs in sorted(by_year.items())}, _summarize(records))


def write_stats_csv(stats: YearlyStats, path) -> None:
    Path(path).write_text(stats.to_csv(), encoding="utf-8")


@dataclass(frozen=True)
class FeatureTable:
    """Item feature matrix keyed by item id."""

    item_ids: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.item_ids, dtype=np.int64)
        mat = np.asarray(self.matrix, dtype=np.float32)
        if mat.ndim != 2 or mat.shape[0] != ids.size:
            raise DataError("feature matrix rows do not match the id index")
        if np.unique(ids).size != ids.size:
            raise DataError("duplicate item ids in feature index")
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "_row", {int(i): k for k, i in enumerate(ids)})

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def rows(self, item_ids: Sequence[int]) -> np.ndarray:
        missing = [i for i in item_ids if int(i) not in self._row]
        if missing:
            raise DataError(
                f"missing features for {len(missing)} item id(s): {sorted(set(missing))[:10]}"
            )
        return self.matrix[[self._row[int(i)] for i in item_ids]]


def write_features(table: FeatureTable, path) -> None:
    """Write ``path`` (raw ``<f4`` row-major) and ``path.json`` (dim + item ids)."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes())
    sidecar = {"dtype": "<f4", "dim": table.dim, "item_ids": [int(i) for i in table.item_ids]}
    Path(str(path) + ".json").write_text(json.dumps(sidecar), encoding="utf-8")


def read_features(path) -> FeatureTable:
    path = Path(path)
    try:
        meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    except FileNotFoundError as exc:
        raise DataError(f"feature file not found: {exc.filename}") from None
    ids = np.asarray(meta["item_ids"], dtype=np.int64)
    dim = int(meta["dim"])
    if raw.size != ids.size * dim:
        raise DataError(f"feature file holds {raw.size} floats, expected {ids.size} x {dim}")
    return FeatureTable(ids, raw.reshape(ids.size, dim))


def price_stats(record: OutfitRecord) -> np.ndarray:
    """``[sum, mean, max, count]`` of the item prices."""
    p = np.array([i.price for i in record.items], dtype=float)
    if p.size == 0:
        return np.zeros(4)
    return np.array([p.sum(), p.mean(), p.max(), p.size])


def encode_labels(values: Sequence[int]) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Dense ids for arbitrary integer labels; classes in ascending order."""
    classes, ids = np.unique(np.asarray(values, dtype=np.int64), return_inverse=True)
    return ids.astype(np.int64), tuple(int(c) for c in classes)


def to_labeled_dataset(
    records: Sequence[OutfitRecord],
    target: str = "likes",
    features: Union[str, FeatureTable] = "price_stats",
    classes: Optional[Sequence[int]] = None,
) -> LabeledDataset:
    """Turn records into a task dataset keyed by publish year.

    ``target`` is ``likes`` (one row per record), ``year`` (one row per
    record, dense year ids) or ``category1`` (one row per item, dense
    ``category_id1`` ids). ``features`` is ``"price_stats"`` or a
    :class:`FeatureTable`; in per-record modes a table contributes the mean
    of the outfit's item vectors. ``classes`` fixes the label order so that
    several datasets share one encoding.
    """
    if target not in ("likes", "year", "category1"):
        raise DataError(f"unknown target {target!r}")
    per_item = target == "category1"
    if isinstance(features, str) and features != "price_stats":
        raise DataError(f"unknown feature source {features!r}")
    if per_item and isinstance(features, str):
        x = np.array([[i.price] for r in records for i in r.items], dtype=float).reshape(-1, 1)
    elif isinstance(features, FeatureTable):
        if per_item:
            x = features.rows([i.item_id for r in records for i in r.items]).astype(float)
        else:
            # validate everything first so the error lists all offenders
            features.rows([i.item_id for r in records for i in r.items])
            x = np.array([features.rows([i.item_id for i in r.items]).mean(axis=0) for r in records], dtype=float)
            x = x.reshape(len(records), features.dim)
    else:
        x = np.array([price_stats(r) for r in records], dtype=float).reshape(-1, 4)

    if per_item:
        keys = np.array([r.year for r in records for _ in r.items], dtype=np.int64)
        labels = [i.category_id1 for r in records for i in r.items]
    else:
        keys = np.array([r.year for r in records], dtype=np.int64)
        labels = [r.like_num for r in records] if target == "likes" else [r.year for r in records]

    if target == "likes":
        y = np.asarray(labels, dtype=float)
    elif classes is None:
        y, _ = encode_labels(labels)
    else:
        lookup = {int(c): k for k, c in enumerate(classes)}
        unknown = sorted({int(v) for v in labels} - set(lookup))
        if unknown:
            raise DataError(f"labels not in the class list: {unknown[:10]}")
        y = np.array([lookup[int(v)] for v in labels], dtype=np.int64)
    return LabeledDataset(x, y, keys)


def to_outfits(records: Sequence[OutfitRecord], table: FeatureTable) -> List[Outfit]:
    return [
        Outfit(table.rows([i.item_id for i in r.items]).astype(float), r.year, r.set_id)
        for r in records
    ]


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Parameters of the desk-scale drifting corpus.

    Item features are ``category_mean + style_loading @ z_outfit + noise``,
    translated by ``year_drift`` per year step. ``z_outfit`` is shared by the
    items of an outfit, which is what makes outfit halves matchable.
    Outfits belong to one of two style families whose compatibility
    structure differs; the share of the second family moves linearly from
    ``family_share[0]`` in the first year to ``family_share[1]`` in the last.
    Likes follow a Poisson law whose log-rate is linear in the mean item
    features and the log of the total price.
    """

    n_outfits: int = 2000
    items_per_outfit: Tuple[int, int] = (4, 8)
    d: int = 16
    years: Tuple[int, ...] = (2013, 2014, 2015, 2016, 2017)
    year_drift: Union[float, Tuple[float, ...]] = 0.1
    n_categories: int = 7
    style_dim: int = 4
    style_scale: float = 1.0
    noise_scale: float = 0.5
    family_share: Tuple[float, float] = (0.0, 0.0)
    family_offset: float = 0.0
    like_coef: Union[float, Tuple[float, ...]] = 0.1
    like_intercept: float = 1.5
    like_price_coef: float = 0.3
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.items_per_outfit
        if not 1 <= lo <= hi:
            raise DataError("items_per_outfit must satisfy 1 <= min <= max")
        if self.n_outfits < 0 or self.d < 1 or self.n_categories < 1 or not self.years:
            raise DataError("invalid corpus size parameters")
        if self.style_dim > self.d:
            raise DataError("style_dim cannot exceed d")

    def drift_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.year_drift, dtype=float), (self.d,)).copy()


@dataclass(frozen=True)
class SyntheticCorpus:
    records: List[OutfitRecord]
    features: FeatureTable
    drift_vector: np.ndarray
    family: np.ndarray  # style family of each record


def gen_synthetic_corpus(spec: SyntheticCorpusSpec) -> SyntheticCorpus:
    """Deterministic drifting outfit corpus; records are spread evenly over the years."""
    rng = np.random.default_rng(spec.seed)
    d, m = spec.d, spec.style_dim
    drift = spec.drift_vector()
    cat_means = rng.normal(0.0, 1.0, (spec.n_categories, d))
    # per-family loadings from the style latent into feature space
    loadings = rng.normal(0.0, spec.style_scale / np.sqrt(m), (2, m, d))
    family_shift = np.zeros((2, d))
    family_shift[1] = spec.family_offset * rng.normal(0.0, 1.0, d) / np.sqrt(d)
    like_coef = np.broadcast_to(np.asarray(spec.like_coef, dtype=float), (d,))
    price_base = rng.uniform(1000, 8000, spec.n_categories)

    n_years = len(spec.years)
    year_idx = np.arange(spec.n_outfits) % n_years
    year_idx = np.sort(year_idx)
    records, vectors, families = [], [], []
    next_item = 1
    lo, hi = spec.items_per_outfit
    for k in range(spec.n_outfits):
        t = int(year_idx[k])
        frac = t / (n_years - 1) if n_years > 1 else 0.0
        share = spec.family_share[0] + frac * (spec.family_share[1] - spec.family_share[0])
        fam = int(rng.random() < share)
        n_items = int(rng.integers(lo, hi + 1))
        cats = rng.integers(0, spec.n_categories, n_items)
        z = rng.normal(0.0, 1.0, m)
        x = (
            cat_means[cats]
            + z @ loadings[fam]
            + family_shift[fam]
            + spec.noise_scale * rng.normal(0.0, 1.0, (n_items, d))
            + t * drift
        )
        prices = np.maximum(0, np.round(price_base[cats] * rng.lognormal(0.0, 0.3, n_items), -1)).astype(int)
        rate = np.exp(spec.like_intercept + x.mean(axis=0) @ like_coef
                      + spec.like_price_coef * np.log1p(prices.sum() / 1000.0))
        likes = int(rng.poisson(min(rate, 1e6)))
        year = spec.years[t]
        span = (min(dt.date(year, 12, 31), COLLECTION_END) - dt.date(year, 1, 1)).days + 1
        date = dt.date(year, 1, 1) + dt.timedelta(days=int(rng.integers(0, max(span, 1))))
        items = tuple(
            Item(next_item + j, int(c) + 1, 10 * (int(c) + 1) + int(rng.integers(0, 5)), int(p))
            for j, (c, p) in enumerate(zip(cats, prices))
        )
        next_item += n_items
        records.append(OutfitRecord(k + 1, items, int(rng.integers(1, 500)), likes, date))
        vectors.append(x)
        families.append(fam)
    if vectors:
        matrix = np.vstack(vectors).astype(np.float32)
    else:
        matrix = np.zeros((0, d), dtype=np.float32)
    table = FeatureTable(np.arange(1, next_item, dtype=np.int64), matrix)
    return SyntheticCorpus(records, table, drift, np.asarray(families, dtype=np.int64))
