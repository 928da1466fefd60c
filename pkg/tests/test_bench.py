import json

import numpy as np
import pytest

from shiftbench import DataError, ShiftBenchError
from shiftbench.bench import (
    BenchConfig,
    Method,
    ResultTable,
    input_digest,
    parse_method,
    run_benchmark,
    synthetic_likes_pool,
)

SMALL_REGRESSION = dict(
    protocol="regression_target_shift", seeds=(0, 1), pool_size=6000,
    train_size=300, test_size=300, w_buckets=(0.0, 20.0),
)
SMALL_CORPUS = {"n_outfits": 150, "years": [2013, 2014, 2015], "d": 6}
SMALL_CATEGORY = dict(
    protocol="category_covariate_shift", seeds=(0,), synthetic=SMALL_CORPUS,
    train_size=120, val_size=20, test_size=80, epochs=2,
)
SMALL_MATCHING = dict(
    protocol="set_matching", seeds=(0,), synthetic=SMALL_CORPUS, k_values=(4,),
    embed_dim=4, epochs=2, learning_rate=0.05,
)
SMALL_YEARDISC = dict(protocol="year_discrimination", seeds=(0, 1), synthetic=SMALL_CORPUS, per_side=200)


class TestMethods:
    @pytest.mark.parametrize("text, expected", [
        ("erm", Method("erm")),
        ("IWERM", Method("iwerm")),
        ("aiwerm(0.5)", Method("aiwerm", 0.5)),
        ("riwerm(alpha=0.75)", Method("riwerm", 0.75)),
        ("riwerm:0.25", Method("riwerm", 0.25)),
        ("max_iw", Method("max_iw")),
    ])
    def test_parse(self, text, expected):
        assert parse_method(text) == expected

    @pytest.mark.parametrize("text", ["aiwerm", "erm(0.5)", "riwerm(1.5)", "sgd", "aiwerm(0.5", "aiwerm(1e)"])
    def test_rejects(self, text):
        with pytest.raises(ShiftBenchError):
            parse_method(text)

    def test_label(self):
        assert Method("riwerm", 0.5).label == "riwerm(0.5)"
        assert Method("erm").label == "erm"


class TestConfig:
    def test_protocol_defaults(self):
        cfg = BenchConfig("category_covariate_shift")
        assert cfg.methods == ("erm", "iwerm", "aiwerm(0.5)")
        assert (cfg.train_size, cfg.test_size, cfg.weight_source) == (3500, 500, "discriminator")
        reg = BenchConfig("regression_target_shift")
        assert reg.weight_source == "true_ratio" and reg.train_size == 1000

    @pytest.mark.parametrize("kw", [
        {"protocol": "bogus"},
        {"protocol": "set_matching", "methods": ("iwerm",)},
        {"protocol": "regression_target_shift", "methods": ("max_iw",)},
        {"protocol": "regression_target_shift", "seeds": ()},
        {"protocol": "regression_target_shift", "weight_source": "oracle"},
        {"protocol": "category_covariate_shift", "weight_source": "true_ratio"},
        {"protocol": "set_matching", "k_values": (1,)},
        {"protocol": "set_matching", "jobs": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ShiftBenchError):
            BenchConfig(**kw)

    def test_unknown_synthetic_key(self):
        with pytest.raises(ShiftBenchError, match="unknown synthetic"):
            run_benchmark(BenchConfig(**{**SMALL_YEARDISC, "synthetic": {"colour": 1}}))
        with pytest.raises(ShiftBenchError, match="unknown synthetic"):
            run_benchmark(BenchConfig(**{**SMALL_REGRESSION, "synthetic": {"colour": 1}}))

    def test_digest_tracks_synthetic_settings(self):
        a = input_digest(BenchConfig(**SMALL_YEARDISC))
        b = input_digest(BenchConfig(**{**SMALL_YEARDISC, "random_seed": 1}))
        assert a != b and a == input_digest(BenchConfig(**SMALL_YEARDISC))


class TestResultTable:
    def test_csv_and_pivot(self):
        t = ResultTable("p", ("method", "w"), ("mae",), [
            {"method": "erm", "w": 0.0, "mae_mean": 1.0, "mae_std": 0.5, "n_seeds": 2},
            {"method": "erm", "w": 10.0, "mae_mean": 2.0, "mae_std": 0.25, "n_seeds": 2},
        ])
        assert t.to_csv().splitlines() == [
            "method,w,mae_mean,mae_std,n_seeds",
            "erm,0.000000,1.000000,0.500000,2",
            "erm,10.000000,2.000000,0.250000,2",
        ]
        assert "2.000(±0.250)" in t.pivot("method", "w", "mae")
        assert t.cell(method="erm", w=10.0)["mae_mean"] == 2.0
        with pytest.raises(KeyError):
            t.cell(method="erm")


class TestRegression:
    def test_pool_is_target_only(self):
        pool = synthetic_likes_pool(n=5000, d=2, seed=0)
        assert pool.targets.min() >= 0 and pool.targets.max() <= 150
        resid = pool.features.mean(axis=1) - pool.targets
        assert abs(resid.std() - 15.0) < 0.5

    def test_degenerate_methods_equal_erm(self):
        cfg = BenchConfig(**SMALL_REGRESSION, methods=("erm", "aiwerm(0)", "riwerm(1)"), normalize_weights=True)
        t = run_benchmark(cfg)
        for w in (0.0, 20.0):
            erm = t.cell(method="erm", w_bucket=w)["mae_mean"]
            assert t.cell(method="aiwerm(0)", w_bucket=w)["mae_mean"] == erm
            assert t.cell(method="riwerm(1)", w_bucket=w)["mae_mean"] == erm

    def test_shift_hurts_erm_and_weighting_helps(self):
        t = run_benchmark(BenchConfig(**{**SMALL_REGRESSION, "w_buckets": (0.0, 40.0)}, methods=("erm", "iwerm")))
        assert t.cell(method="erm", w_bucket=40.0)["mae_mean"] > t.cell(method="erm", w_bucket=0.0)["mae_mean"]
        assert t.cell(method="iwerm", w_bucket=40.0)["mae_mean"] < t.cell(method="erm", w_bucket=40.0)["mae_mean"]
        assert abs(t.cell(method="erm", w_bucket=40.0)["realized_w_mean"] - 40.0) < 5

    @pytest.mark.parametrize("source", ["gaussian_fit", "discriminator"])
    def test_estimated_weight_sources_run(self, source):
        t = run_benchmark(BenchConfig(**SMALL_REGRESSION, weight_source=source, methods=("erm", "riwerm(0.5)")))
        assert all(np.isfinite(r["mae_mean"]) for r in t.rows)

    def test_unreachable_bucket_named(self):
        cfg = BenchConfig(**{**SMALL_REGRESSION, "w_buckets": (500.0,)})
        with pytest.raises(DataError, match="W bucket 500"):
            run_benchmark(cfg)

    def test_single_test_mean(self):
        t = run_benchmark(BenchConfig(**SMALL_REGRESSION, test_mu=60.0, methods=("erm",)))
        assert [r["w_bucket"] for r in t.rows] == [20.0]

    def test_no_shift_mode(self):
        t = run_benchmark(BenchConfig(**SMALL_REGRESSION, target_shift=False, methods=("erm",)))
        assert [r["w_bucket"] for r in t.rows] == [0.0]

    def test_from_records(self, fixtures_dir):
        cfg = BenchConfig(
            "regression_target_shift", records=str(fixtures_dir / "six_records.jsonl"),
            train_size=2, test_size=2, seeds=(0,), target_shift=False, train_mu=5.0, train_sigma=5.0,
            methods=("erm",),
        )
        assert run_benchmark(cfg).rows[0]["n_seeds"] == 1


class TestGroupedProtocols:
    def test_category_grid(self):
        t = run_benchmark(BenchConfig(**SMALL_CATEGORY, methods=("erm", "aiwerm(0)")))
        assert len(t.rows) == 2 * 9
        for r in t.rows:
            assert 0 <= r["accuracy_mean"] <= 1
        for r in t.rows:
            if r["method"] == "aiwerm(0)":
                twin = t.cell(method="erm", train_group=r["train_group"], test_group=r["test_group"])
                assert twin["accuracy_mean"] == r["accuracy_mean"]

    def test_missing_group(self):
        with pytest.raises(DataError, match=r"group\(s\) \[2019\]"):
            run_benchmark(BenchConfig(**SMALL_CATEGORY, years=(2013, 2019)))

    def test_records_need_features(self, fixtures_dir):
        with pytest.raises(DataError, match="--features"):
            run_benchmark(BenchConfig(**{**SMALL_CATEGORY, "records": str(fixtures_dir / "six_records.jsonl")}))

    def test_matching_training_year_identical(self):
        t = run_benchmark(BenchConfig(**SMALL_MATCHING))
        accs = {t.cell(method=m, k=4, year=2013)["accuracy_mean"] for m in ("erm", "mean_iw", "max_iw")}
        assert len(accs) == 1
        assert {r["year"] for r in t.rows} == {2013, 2014, 2015}

    def test_yeardisc(self):
        t = run_benchmark(BenchConfig(**SMALL_YEARDISC))
        assert [r["gap"] for r in t.rows] == [0, 1, 2]
        assert all(0 <= r["auc_mean"] <= 1 for r in t.rows)
        with pytest.raises(DataError, match="anchor year 2020"):
            run_benchmark(BenchConfig(**SMALL_YEARDISC, anchor_year=2020, years=(2013, 2014)))


class TestDeterminism:
    @pytest.mark.parametrize("kw", [SMALL_REGRESSION, SMALL_CATEGORY, SMALL_MATCHING, SMALL_YEARDISC])
    def test_rerun_and_parallel_identical(self, kw):
        serial = run_benchmark(BenchConfig(**kw)).to_csv()
        assert run_benchmark(BenchConfig(**kw)).to_csv() == serial
        assert run_benchmark(BenchConfig(**kw, jobs=2)).to_csv() == serial

    def test_output_files(self, tmp_path):
        out = tmp_path / "sub" / "r.csv"
        table = run_benchmark(BenchConfig(**SMALL_YEARDISC, output=str(out)))
        assert out.read_text() == table.to_csv()
        meta = json.loads((tmp_path / "sub" / "r.csv.meta.json").read_text())
        assert meta["protocol"] == "year_discrimination" and meta["seeds"] == [0, 1]
        assert meta["columns"] == table.columns()
        assert meta["config"]["synthetic"]["n_outfits"] == 150
