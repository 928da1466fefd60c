"""``shiftbench`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
import typing
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .bench import BenchConfig, run_benchmark
from .data_io import (
    SyntheticCorpusSpec,
    gen_synthetic_corpus,
    read_records,
    write_features,
    write_records,
    write_stats_csv,
    yearly_stats,
)
from .errors import DataError, NumericError, ShiftBenchError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PROTOCOL_OF = {
    "regression": "regression_target_shift",
    "category": "category_covariate_shift",
    "matching": "set_matching",
    "yeardisc": "year_discrimination",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Value parsing shared by flags and the config file
# ---------------------------------------------------------------------------


def _split(text: str) -> List[str]:
    return [t for t in (p.strip() for p in str(text).split(",")) if t]


def _int_list(text: str):
    return tuple(int(t) for t in _split(text))


def _float_list(text: str):
    return tuple(float(t) for t in _split(text))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _literal(text: str):
    """Numbers and JSON arrays become Python values; anything else stays a string."""
    try:
        return json.loads(text)
    except ValueError:
        return text


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(BenchConfig)}


def _convert(name: str, value):
    """Coerce a config-file string to the type of the ``BenchConfig`` field ``name``."""
    if name not in _FIELD_TYPES or name in ("protocol", "synthetic"):
        raise UsageError(f"unknown configuration key {name!r}")
    if value is None or not isinstance(value, str):
        return value
    kind = str(_FIELD_TYPES[name])
    if name == "methods":
        return tuple(_split(value))
    if name in ("seeds", "years", "k_values"):
        return _int_list(value)
    if name == "w_buckets":
        return _float_list(value)
    if "bool" in kind:
        return _bool(value)
    if "int" in kind:
        return int(value)
    if "float" in kind:
        return float(value)
    return value


def _read_config(path: str, protocol: str) -> Dict[str, object]:
    """Merge the ``[bench]`` section, the protocol's section and ``[synthetic]``."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from None
    short = {v: k for k, v in PROTOCOL_OF.items()}[protocol]
    values: Dict[str, object] = {}
    for section in ("bench", short, protocol):
        if parser.has_section(section):
            for key, raw in parser.items(section):
                name = key.replace("-", "_")
                try:
                    values[name] = _convert(name, raw)
                except ValueError as exc:
                    raise UsageError(f"config key {key!r}: {exc}") from None
    if parser.has_section("synthetic"):
        values["synthetic"] = {k.replace("-", "_"): _literal(v) for k, v in parser.items("synthetic")}
    return values


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common_bench_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--config", help="INI file; flags override its values")
    g.add_argument("--random-seed", type=int, help="root seed for every derived random stream")
    g.add_argument("--seeds", type=_int_list, help="comma-separated seed indices (default 0,1,2)")
    g.add_argument("--n-seeds", type=int, help="shorthand for --seeds 0,...,N-1")
    g.add_argument("--methods", type=lambda s: tuple(_split(s)),
                   help="comma-separated, e.g. erm,iwerm,aiwerm(0.5),riwerm(0.75)")
    g.add_argument("--output", help="CSV path; a .meta.json sidecar is written next to it")
    g.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    d = p.add_argument_group("data")
    d.add_argument("--records", help="JSONL outfit records (default: synthetic data)")
    d.add_argument("--features", help="feature table written by gen-synthetic or write_features")
    d.add_argument("--synthetic", action="append", metavar="KEY=VALUE",
                   help="override a synthetic generator setting (repeatable)")
    w = p.add_argument_group("weighting")
    w.add_argument("--weight-source", choices=("true_ratio", "gaussian_fit", "discriminator"))
    w.add_argument("--normalize-weights", action=argparse.BooleanOptionalAction, default=None)
    w.add_argument("--beta", type=float, help="density-ratio bound used to clip the discriminator")


def _optimizer_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("optimizer")
    g.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shiftbench", description="Dataset-shift benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    bench = sub.add_parser("bench", help="run an experiment protocol")
    protocols = bench.add_subparsers(dest="protocol", required=True, parser_class=_Parser)

    reg = protocols.add_parser("regression", help="linear regression under target shift")
    _common_bench_flags(reg)
    g = reg.add_argument_group("target shift")
    g.add_argument("--target-shift", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--train-size", type=int)
    g.add_argument("--test-size", type=int)
    g.add_argument("--train-mu", type=float)
    g.add_argument("--train-sigma", type=float)
    g.add_argument("--test-mu", type=float, help="single test mean instead of the W grid")
    g.add_argument("--test-sigma", type=float)
    g.add_argument("--w-buckets", type=_float_list, help="comma-separated shift buckets")
    g.add_argument("--w-scale", type=float, help="multiplier mapping buckets to target units")
    g.add_argument("--w-tolerance", type=float, help="allowed |realized - requested| in bucket units")
    g.add_argument("--pool-size", type=int, help="rows in the synthetic pool")
    g.add_argument("--ridge", type=float)

    cat = protocols.add_parser("category", help="softmax classification across years")
    _common_bench_flags(cat)
    _optimizer_flags(cat)
    g = cat.add_argument_group("grid")
    g.add_argument("--years", type=_int_list)
    g.add_argument("--train-size", type=int)
    g.add_argument("--val-size", type=int)
    g.add_argument("--test-size", type=int)

    mat = protocols.add_parser("matching", help="Fill-In-The-N-Blank set matching")
    _common_bench_flags(mat)
    _optimizer_flags(mat)
    g = mat.add_argument_group("matching")
    g.add_argument("--years", type=_int_list)
    g.add_argument("--k", dest="k_values", type=_int_list, help="candidate counts, e.g. 4,8")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--holdout-fraction", type=float)

    yd = protocols.add_parser("yeardisc", help="anchor-year vs other-year discriminability")
    _common_bench_flags(yd)
    g = yd.add_argument_group("years")
    g.add_argument("--years", type=_int_list)
    g.add_argument("--anchor-year", type=int)
    g.add_argument("--per-side", type=int, help="items drawn from each year")

    st = sub.add_parser("stats", help="per-year statistics of a record file")
    st.add_argument("records")
    st.add_argument("--output", help="CSV path (default: stdout)")
    st.add_argument("--strict", action="store_true", help="treat datasheet violations as errors")

    gen = sub.add_parser("gen-synthetic", help="write a synthetic drifting corpus")
    gen.add_argument("--output-dir", required=True)
    gen.add_argument("--random-seed", type=int, default=0)
    gen.add_argument("--synthetic", action="append", metavar="KEY=VALUE")
    return parser


def _synthetic_overrides(pairs: Optional[Sequence[str]]) -> Dict[str, object]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--synthetic expects KEY=VALUE, got {pair!r}")
        out[key.strip().replace("-", "_")] = _literal(value.strip())
    return out


_NOT_CONFIG = {"command", "protocol", "config", "n_seeds", "synthetic"}


def config_from_args(args: argparse.Namespace) -> BenchConfig:
    """Defaults, then the config file, then explicit flags."""
    protocol = PROTOCOL_OF[args.protocol]
    values: Dict[str, object] = _read_config(args.config, protocol) if args.config else {}
    for key, val in vars(args).items():
        if key not in _NOT_CONFIG and val is not None:
            values[key] = val
    if args.n_seeds is not None:
        if args.n_seeds < 1:
            raise UsageError("--n-seeds must be >= 1")
        values["seeds"] = tuple(range(args.n_seeds))
    synthetic = dict(values.pop("synthetic", {}) or {})
    synthetic.update(_synthetic_overrides(args.synthetic))
    return BenchConfig(protocol=protocol, synthetic=synthetic, **values)


def _print_table(table, out) -> None:
    if table.protocol == "regression_target_shift":
        out.write(table.pivot("method", "w_bucket", "mae"))
    elif table.protocol == "category_covariate_shift":
        for m in dict.fromkeys(r["method"] for r in table.rows):
            out.write(f"# {m}: rows = train year, columns = test year\n")
            sub = dataclasses.replace(table, rows=[r for r in table.rows if r["method"] == m])
            out.write(sub.pivot("train_group", "test_group", "accuracy"))
    elif table.protocol == "set_matching":
        for k in dict.fromkeys(r["k"] for r in table.rows):
            out.write(f"# K = {k}\n")
            sub = dataclasses.replace(table, rows=[r for r in table.rows if r["k"] == k])
            out.write(sub.pivot("method", "year", "accuracy"))
    else:
        out.write(table.to_csv())


def _cmd_bench(args, out) -> int:
    cfg = config_from_args(args)
    table = run_benchmark(cfg)
    _print_table(table, out)
    if cfg.output:
        out.write(f"wrote {cfg.output}\n")
    return EXIT_OK


def _cmd_stats(args, out) -> int:
    stats = yearly_stats(read_records(args.records, strict=args.strict))
    if args.output:
        write_stats_csv(stats, args.output)
    else:
        out.write(stats.to_csv())
    return EXIT_OK


def _cmd_gen(args, out) -> int:
    kw = _synthetic_overrides(args.synthetic)
    kw.setdefault("seed", args.random_seed)
    for key in ("items_per_outfit", "years", "family_share"):
        if key in kw:
            kw[key] = tuple(kw[key])
    unknown = set(kw) - {f.name for f in dataclasses.fields(SyntheticCorpusSpec)}
    if unknown:
        raise UsageError(f"unknown synthetic corpus settings {sorted(unknown)}")
    spec = SyntheticCorpusSpec(**kw)
    corpus = gen_synthetic_corpus(spec)
    root = Path(args.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    write_records(corpus.records, root / "records.jsonl")
    write_features(corpus.features, root / "features.f32")
    out.write(f"wrote {len(corpus.records)} outfits to {root}\n")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, out: typing.TextIO = None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if args.command == "bench":
            return _cmd_bench(args, out)
        if args.command == "stats":
            return _cmd_stats(args, out)
        return _cmd_gen(args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShiftBenchError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
