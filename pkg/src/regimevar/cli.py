"""Command-line entry point: stats | backtest | compare | simulate | fit."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (BacktestConfig, BreachRecord, derive_seed, fit_hmm_with_restarts, parse_model_id,
                       read_records, run_backtest, write_estimates, write_records)
from .bundle import ModelBundle
from .config import build_config, parse_overrides, read_config_file, render_config
from .errors import ConfigError, DataError, RegimeVarError
from .evaluate import breach_sets_from_records, comparison_matrix
from .gaussian import fit_gaussian
from .marketdata import (STATS_QUANTILES, ReturnSeries, aggregate_periods, compound,
                         compute_returns, descriptive_stats, load_price_series)
from .regimenet import BackboneSpec, train

logger = logging.getLogger("regimevar")


# ---------------------------------------------------------------- helpers

def _digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_returns(path) -> ReturnSeries:
    return compute_returns(load_price_series(path))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def _out_dir(path) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _levels(text) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad --levels value {text!r}") from None


# ---------------------------------------------------------------- stats

def cmd_stats(args) -> int:
    daily = _load_returns(args.input)
    panels = []
    if args.frequency in ("daily", "both"):
        panels.append(descriptive_stats(daily))
    if args.frequency in ("weekly", "both"):
        panels.append(descriptive_stats(aggregate_periods(daily, "weekly")))
    out = _out_dir(args.out_dir)
    for s in panels:
        if args.format == "json":
            text = s.to_json() + "\n"
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            for row in s.rows():
                w.writerow([_fmt(v) if not isinstance(v, float) else f"{v:.6g}" for v in row])
            text = f"# {s.frequency}\n" + buf.getvalue()
        sys.stdout.write(text)
        if out is not None:
            (out / f"stats_{s.frequency}.{args.format}").write_text(text)
    return 0


# ---------------------------------------------------------------- backtest

_FLAG_KEYS = {"models": "models", "window": "window_days", "paths": "paths", "levels": "levels",
              "horizon": "horizon_days", "seed": "seed", "calendar": "calendar",
              "refit_stride": "refit_stride", "epochs": "epochs", "attempts": "attempts"}


def resolve_config(args) -> BacktestConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = parse_overrides(args.set)
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if key == "models":
            v = tuple(m.strip() for m in v.split(",") if m.strip())
        elif key == "levels":
            v = _levels(v)
        overrides[key] = v
    return build_config(file_values, overrides)


def cmd_backtest(args) -> int:
    timing = {}
    t0 = time.perf_counter()
    cfg = resolve_config(args)
    data = _load_returns(args.input)
    timing["load"] = time.perf_counter() - t0
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        raise ConfigError("--threads must be at least 1")

    t1 = time.perf_counter()
    result = run_backtest(data, cfg, threads=threads)
    timing["backtest"] = time.perf_counter() - t1

    out = _out_dir(args.out_dir)
    t2 = time.perf_counter()
    if args.format == "json":
        records_path = out / "breaches.json"
        rows = [{"date": str(r.date), "model": r.model, "asset": r.asset, "level": r.level,
                 "threshold": r.threshold, "realized": r.realized, "breach": int(r.breached),
                 "excess": r.excess, "status": "ok"} for r in result.records]
        rows += [{"date": str(d), "model": m, "status": "failed"}
                 for m, ds in result.failures.items() for d in ds]
        records_path.write_text(json.dumps(rows, indent=1) + "\n")
    else:
        records_path = out / "breaches.csv"
        write_records(result.records, result.failures, result.asset_names, cfg.levels, records_path)
    write_estimates(result.estimates, out / "estimates.csv")
    (out / "config.ini").write_text(render_config(cfg))
    counts: dict = {}
    for r in result.records:
        key = f"{r.model}|{r.asset}|{r.level!r}"
        counts[key] = counts.get(key, 0) + int(r.breached)
    summary = {"evaluation_dates": len(result.dates), "years": result.years,
               "failures": result.failure_counts(), "breaches": counts}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    timing["write"] = time.perf_counter() - t2

    outputs = {p.name: _digest(p) for p in (records_path, out / "estimates.csv", out / "config.ini",
                                              out / "summary.json")}
    manifest = {"artifact_version": __version__, "command": "backtest",
                "argv": sys.argv[1:], "config": cfg.to_dict(), "master_seed": cfg.seed,
                "threads": threads, "inputs": {str(args.input): _digest(args.input)},
                "outputs": outputs, "timing_seconds": timing}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    for m, n in result.failure_counts().items():
        if n:
            print(f"warning: {m} failed on {n} of {len(result.dates)} dates", file=sys.stderr)
    print(f"{len(result.dates)} evaluation dates, {len(cfg.models)} model(s); results in {out}")
    return 0


# ---------------------------------------------------------------- compare

def _read_any(path: Path):
    if path.is_dir():
        for name in ("breaches.csv", "breaches.json"):
            if (path / name).exists():
                return _read_any(path / name)
        raise DataError(f"{path}: no breaches.csv or breaches.json inside")
    if path.suffix == ".json":
        try:
            rows = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: {exc}") from None
        records, failures = [], {}
        for r in rows:
            d = np.datetime64(r["date"], "D")
            if r.get("status") == "failed":
                failures.setdefault(r["model"], []).append(d)
            else:
                records.append(BreachRecord(d, r["model"], r["asset"], float(r["level"]),
                                            float(r["realized"]), float(r["threshold"]),
                                            float(r["excess"]), bool(r["breach"])))
        return records, failures
    return read_records(path)


def cmd_compare(args) -> int:
    tags = [t.strip() for t in args.tags.split(",")] if args.tags else None
    if tags is not None and len(tags) != len(args.results):
        raise ConfigError("--tags needs one tag per result set")
    records, failures = [], {}
    for i, path in enumerate(args.results):
        recs, fails = _read_any(Path(path))
        if tags:
            recs = [replace(r, model=f"{r.model}@{tags[i]}") for r in recs]
            fails = {f"{m}@{tags[i]}": d for m, d in fails.items()}
        records.extend(recs)
        for m, d in fails.items():
            failures.setdefault(m, []).extend(d)
    if args.models:
        keep = {m.strip() for m in args.models.split(",")}
        records = [r for r in records if r.model in keep]
    sets = breach_sets_from_records(records, failures)
    report = comparison_matrix(sets, records, calendar=args.calendar, cost_mode=args.cost_mode,
                               alternative=args.alternative)
    out = _out_dir(args.out_dir)
    if args.format == "json":
        text = report.to_json() + "\n"
        sys.stdout.write(text)
        if out is not None:
            (out / "comparison.json").write_text(text)
    else:
        sections = {"breaches": report.breach_table(), "comparisons": report.matrix_rows(),
                    "costs": report.cost_rows(), "comp_totals": report.comp_totals()}
        for name, rows in sections.items():
            text = _csv_text(rows)
            sys.stdout.write(f"# {name}\n{text}")
            if out is not None:
                (out / f"{name}.csv").write_text(text)
    return 0


# ---------------------------------------------------------------- fit / simulate

def cmd_fit(args) -> int:
    data = _load_returns(args.input)
    if len(data) < args.window:
        raise DataError(f"need {args.window} daily returns, got {len(data)}")
    window = data.returns[-args.window:]
    spec = parse_model_id(args.model)
    seed = derive_seed(args.seed, data.dates[-1], spec.id)
    if spec.family == "classic":
        model = fit_gaussian(window)
    elif spec.family == "hmm":
        model = fit_hmm_with_restarts(window, args.regimes, seed, 5)
    else:
        cfg = BacktestConfig(window_days=args.window, epochs=args.epochs, attempts=args.attempts,
                             regimes=args.regimes, models=(spec.id,))
        hmm = fit_hmm_with_restarts(window, args.regimes, seed, 5) if spec.init == "hmm" else None
        model = train(window, BackboneSpec(spec.family), cfg.train_config(spec, seed), hmm)
    ModelBundle(spec.id, data.asset_names, model).save(args.out)
    print(f"saved {spec.id} bundle to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    bundle = ModelBundle.load(args.model)
    history = _load_returns(args.input)
    if history.asset_names != bundle.asset_names:
        raise DataError(f"history assets {history.asset_names} differ from bundle assets {bundle.asset_names}")
    if args.paths < 1 or args.horizon < 0:
        raise ConfigError("--paths must be >= 1 and --horizon >= 0")
    rng = np.random.default_rng(args.seed)
    paths = bundle.simulate(history.returns, args.horizon, args.paths, rng)
    totals = compound(paths, axis=1)
    if args.paths == 1:
        rows = [{"day": i + 1, **{a: float(paths[0, i, j]) for j, a in enumerate(bundle.asset_names)}}
                for i in range(args.horizon)]
        rows.append({"day": "total", **{a: float(totals[0, j]) for j, a in enumerate(bundle.asset_names)}})
    else:
        levels = sorted(set(_levels(args.levels)) | set(STATS_QUANTILES))
        q = np.quantile(totals, levels, axis=0)
        rows = [{"quantile": lv, **{a: float(q[i, j]) for j, a in enumerate(bundle.asset_names)}}
                for i, lv in enumerate(levels)]
    if args.format == "json":
        sys.stdout.write(json.dumps({"model_id": bundle.model_id, "horizon": args.horizon,
                                     "paths": args.paths, "seed": args.seed, "rows": rows},
                                    indent=1) + "\n")
    else:
        sys.stdout.write(_csv_text(rows))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regimevar", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="descriptive statistics of daily and weekly returns")
    s.add_argument("--input", required=True)
    s.add_argument("--frequency", choices=("daily", "weekly", "both"), default="both")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_stats)

    b = sub.add_parser("backtest", help="moving-window VaR backtest")
    b.add_argument("--input", required=True)
    b.add_argument("--config")
    b.add_argument("--models")
    b.add_argument("--window", type=int)
    b.add_argument("--paths", type=int)
    b.add_argument("--levels")
    b.add_argument("--horizon", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--calendar", choices=("weekly", "monthly"))
    b.add_argument("--refit-stride", dest="refit_stride", type=int)
    b.add_argument("--epochs", type=int)
    b.add_argument("--attempts", type=int)
    b.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    b.add_argument("--threads", type=int)
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    b.add_argument("--out-dir", default="results")
    b.set_defaults(func=cmd_backtest)

    c = sub.add_parser("compare", help="pairwise comparison of backtest results")
    c.add_argument("results", nargs="+", help="breaches files or backtest output directories")
    c.add_argument("--tags", help="comma-separated tag per result set, appended to model ids")
    c.add_argument("--models", help="restrict to these model ids")
    c.add_argument("--calendar", choices=("weekly", "monthly"), default="weekly")
    c.add_argument("--cost-mode", dest="cost_mode", choices=("excess", "realized"), default="excess")
    c.add_argument("--alternative", choices=("two-sided", "less", "greater"), default="two-sided")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.add_argument("--out-dir")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("simulate", help="quantiles of simulated horizon returns from a model bundle")
    m.add_argument("--model", required=True)
    m.add_argument("--input", required=True, help="price history preceding the simulation")
    m.add_argument("--horizon", type=int, default=5)
    m.add_argument("--paths", type=int, default=100_000)
    m.add_argument("--levels", default="0.01,0.05")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--format", choices=("csv", "json"), default="csv")
    m.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one model on the trailing window and save a bundle")
    f.add_argument("--input", required=True)
    f.add_argument("--model", required=True)
    f.add_argument("--window", type=int, default=2000)
    f.add_argument("--regimes", type=int, default=2)
    f.add_argument("--epochs", type=int, default=200)
    f.add_argument("--attempts", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RegimeVarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
