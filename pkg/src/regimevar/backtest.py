"""Moving-window VaR backtest: refit, simulate, threshold, compare with the realised period."""

from __future__ import annotations

import csv
import hashlib
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InsufficientDataError, NumericalError
from .gaussian import fit_gaussian, sample
from .hmm import HmmParams, baum_welch, forward_backward, simulate_hmm
from .marketdata import ReturnSeries, compound, period_groups, period_keys
from .regimenet import BackboneSpec, TrainConfig, simulate, train

logger = logging.getLogger(__name__)

_NETS = {"ff": "ffn", "ffn": "ffn", "cnn": "tcn", "tcn": "tcn", "lstm": "lstm"}
PERIODS_PER_YEAR = {"weekly": 52.0, "monthly": 12.0}
TRAIN_OVERRIDES = ("attempts", "epochs", "learning_rate", "weight_decay", "lookahead")


@dataclass(frozen=True)
class ModelSpec:
    """Parsed model identifier such as ``classic``, ``hmm`` or ``lstm+hmm+reg=2``."""

    family: str
    init: str = "random"
    reg_weight: float = 0.0

    @property
    def id(self) -> str:
        if self.family in ("classic", "hmm"):
            return self.family
        parts = [self.family]
        if self.init == "hmm":
            parts.append("hmm")
        if self.reg_weight == 1.0:
            parts.append("reg")
        elif self.reg_weight:
            parts.append(f"reg={self.reg_weight:g}")
        return "+".join(parts)

    @property
    def is_net(self) -> bool:
        return self.family in ("ffn", "tcn", "lstm")


def parse_model_id(text: str) -> ModelSpec:
    parts = [p.strip().lower() for p in text.strip().split("+") if p.strip()]
    if not parts:
        raise ConfigError("empty model identifier")
    head, mods = parts[0], parts[1:]
    if head in ("classic", "hmm"):
        if mods:
            raise ConfigError(f"model {head!r} takes no modifiers: {text!r}")
        return ModelSpec(head)
    if head not in _NETS:
        raise ConfigError(f"unknown model {head!r}; expected classic, hmm, ff, cnn or lstm")
    init, reg = "random", 0.0
    for m in mods:
        match = re.fullmatch(r"reg(?:=([0-9.eE+-]+))?", m)
        if m == "hmm":
            init = "hmm"
        elif match:
            try:
                reg = 1.0 if match.group(1) is None else float(match.group(1))
            except ValueError:
                raise ConfigError(f"bad regulariser weight in {text!r}") from None
            if reg < 0:
                raise ConfigError(f"regulariser weight must be non-negative in {text!r}")
        else:
            raise ConfigError(f"unknown model modifier {m!r} in {text!r}")
    return ModelSpec(_NETS[head], init, reg)


@dataclass(frozen=True)
class BacktestConfig:
    window_days: int = 2000
    horizon_days: int = 5
    paths: int = 100_000
    levels: tuple[float, ...] = (0.01, 0.05)
    calendar: str = "weekly"
    models: tuple[str, ...] = ("classic", "hmm")
    seed: int = 0
    refit_stride: int = 1
    regimes: int = 2
    hmm_restarts: int = 5
    epochs: int = 200
    attempts: int = 5
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    lookahead: int = 5
    cost_mode: str = "excess"
    # per-model training overrides: ((model id, ((key, value), ...)), ...)
    model_overrides: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        object.__setattr__(self, "models", tuple(parse_model_id(m).id for m in self.models))
        overrides = tuple(sorted((parse_model_id(m).id, tuple(sorted(dict(kv).items())))
                                 for m, kv in (self.model_overrides.items()
                                               if isinstance(self.model_overrides, dict)
                                               else self.model_overrides)))
        for _, kv in overrides:
            bad = {k for k, _ in kv} - set(TRAIN_OVERRIDES)
            if bad:
                raise ConfigError(f"per-model keys {sorted(bad)} are not overridable")
        object.__setattr__(self, "model_overrides", overrides)
        if self.paths < 1:
            raise ConfigError("paths must be at least 1")
        if not self.levels or any(not 0 < a < 0.5 for a in self.levels):
            raise ConfigError("quantile levels must lie in (0, 0.5)")
        if any(self.paths < 1.0 / a for a in self.levels):
            raise ConfigError("paths must be at least 1/alpha for every level")
        if self.window_days <= self.horizon_days:
            raise ConfigError("window_days must exceed horizon_days")
        if self.horizon_days < 1:
            raise ConfigError("horizon_days must be positive")
        if self.calendar not in PERIODS_PER_YEAR:
            raise ConfigError(f"calendar must be weekly or monthly, got {self.calendar!r}")
        if self.refit_stride < 1:
            raise ConfigError("refit_stride must be at least 1")
        if not self.models:
            raise ConfigError("no models configured")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("duplicate model identifiers")
        if self.cost_mode not in ("excess", "realized"):
            raise ConfigError("cost_mode must be 'excess' or 'realized'")

    def train_config(self, spec: ModelSpec, seed: int) -> TrainConfig:
        values = dict(attempts=self.attempts, epochs=self.epochs, learning_rate=self.learning_rate,
                      weight_decay=self.weight_decay, lookahead=self.lookahead)
        for model_id, kv in self.model_overrides:
            if model_id == spec.id:
                values.update(kv)
        return TrainConfig(window_days=self.window_days, reg_weight=spec.reg_weight,
                           init=spec.init, seed=seed, k=self.regimes, **values)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["levels"] = list(self.levels)
        d["models"] = list(self.models)
        d["model_overrides"] = {m: dict(kv) for m, kv in self.model_overrides}
        return d


@dataclass(frozen=True)
class VarEstimate:
    date: np.datetime64
    model: str
    asset: str
    level: float
    threshold: float


@dataclass(frozen=True)
class BreachRecord:
    date: np.datetime64
    model: str
    asset: str
    level: float
    realized: float
    threshold: float
    excess: float
    breached: bool


@dataclass
class BacktestResult:
    config: BacktestConfig
    asset_names: tuple[str, ...]
    dates: np.ndarray
    estimates: list[VarEstimate] = field(default_factory=list)
    records: list[BreachRecord] = field(default_factory=list)
    failures: dict[str, list[np.datetime64]] = field(default_factory=dict)

    @property
    def years(self) -> float:
        return len(self.dates) / PERIODS_PER_YEAR[self.config.calendar]

    def failure_counts(self) -> dict[str, int]:
        return {m: len(self.failures.get(m, [])) for m in self.config.models}

    def write_csv(self, path) -> None:
        write_records(self.records, self.failures, self.asset_names, self.config.levels, path)


# ---------------------------------------------------------------- thresholds & breaches

def var_threshold(weekly_path_returns, alpha: float) -> float:
    """Empirical alpha-quantile (linear interpolation) of simulated period returns."""
    x = np.asarray(weekly_path_returns, dtype=float).reshape(-1)
    if not 0 < alpha < 1:
        raise DataError("alpha must lie in (0, 1)")
    if x.size < 1.0 / alpha:
        raise DataError(f"{x.size} samples are too few for alpha={alpha} (need {int(np.ceil(1 / alpha))})")
    return float(np.quantile(x, alpha))


def detect_breaches(estimates, realized: ReturnSeries) -> list[BreachRecord]:
    """Compare each threshold with the realised return recorded for its date.

    ``realized`` holds one row per evaluation date (the return of the period
    following that date). A breach is realised < threshold, strictly.
    """
    index = {d: i for i, d in enumerate(realized.dates)}
    assets = {a: j for j, a in enumerate(realized.asset_names)}
    out = []
    for e in estimates:
        i = index.get(np.datetime64(e.date, "D"))
        if i is None:
            raise DataError(f"no realised return for evaluation date {e.date}")
        if e.asset not in assets:
            raise DataError(f"no realised return for asset {e.asset!r}")
        r = float(realized.returns[i, assets[e.asset]])
        out.append(BreachRecord(e.date, e.model, e.asset, e.level, r, e.threshold,
                                r - e.threshold, r < e.threshold))
    return out


@dataclass(frozen=True)
class CostSummary:
    breaches: int
    accumulated_per_year: float
    average_per_breach: float | None


def breach_costs(records, years: float, mode: str = "excess") -> dict[tuple[str, str, float], CostSummary]:
    """Per (model, asset, level): summed breach loss per year and mean loss per breach.

    ``mode="excess"`` measures each breach by realised - threshold; ``"realized"``
    uses the realised return itself.
    """
    if years <= 0:
        raise DataError("years must be positive")
    if mode not in ("excess", "realized"):
        raise ConfigError("mode must be 'excess' or 'realized'")
    groups: dict[tuple[str, str, float], list[float]] = {}
    for r in records:
        key = (r.model, r.asset, r.level)
        bucket = groups.setdefault(key, [])
        if r.breached:
            bucket.append(r.excess if mode == "excess" else r.realized)
    out = {}
    for key, losses in groups.items():
        total = float(np.sum(losses)) if losses else 0.0
        out[key] = CostSummary(len(losses), total / years, total / len(losses) if losses else None)
    return out


# ---------------------------------------------------------------- calendar

@dataclass(frozen=True)
class EvalPoint:
    date: np.datetime64
    end: int  # index of the last daily return in the training window (inclusive)
    next_start: int
    next_stop: int


def evaluation_points(daily: ReturnSeries, window_days: int, calendar: str = "weekly") -> list[EvalPoint]:
    """Period ends with a full trailing window and a complete following period.

    A trailing period is complete when its last trading day falls on the
    period's closing day or later data exists.
    """
    groups = period_groups(daily.dates, calendar)
    closing = np.busday_offset(period_keys(daily.dates, calendar), 0, roll="backward")
    points = []
    for (a, b), (c, d) in zip(groups[:-1], groups[1:]):
        end = b - 1
        if end + 1 < window_days:
            continue
        complete = d < len(daily) or daily.dates[d - 1] >= closing[d - 1]
        if not complete:
            continue
        points.append(EvalPoint(daily.dates[end], end, c, d))
    return points


def derive_seed(master: int, date, model: str) -> int:
    """Stable 64-bit seed for one (date, model) cell, independent of other models."""
    msg = f"{int(master)}|{np.datetime64(date, 'D')}|{model}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


# ---------------------------------------------------------------- model fitting

def fit_hmm_with_restarts(window: np.ndarray, k: int, seed: int, restarts: int) -> HmmParams:
    last: Exception | None = None
    for attempt in range(max(restarts, 1)):
        try:
            return baum_welch(window, k, np.random.default_rng([seed, 0x484D, attempt]))
        except NumericalError as exc:
            last = exc
    raise NumericalError(f"HMM fit failed after {restarts} restarts: {last}")


def _fit(spec: ModelSpec, window: np.ndarray, cfg: BacktestConfig, seed: int):
    if spec.family == "classic":
        return fit_gaussian(window)
    if spec.family == "hmm":
        return fit_hmm_with_restarts(window, cfg.regimes, seed, cfg.hmm_restarts)
    hmm = None
    if spec.init == "hmm":
        hmm = fit_hmm_with_restarts(window, cfg.regimes, seed, cfg.hmm_restarts)
    return train(window, BackboneSpec(spec.family), cfg.train_config(spec, seed), hmm)


def _simulate(spec: ModelSpec, fitted, window: np.ndarray, cfg: BacktestConfig,
              rng: np.random.Generator) -> np.ndarray:
    if spec.family == "classic":
        return sample(fitted, rng, (cfg.paths, cfg.horizon_days))
    if spec.family == "hmm":
        start = forward_backward(fitted, window).probs[-1]
        return simulate_hmm(fitted, start / start.sum(), cfg.horizon_days, rng, cfg.paths)
    return simulate(fitted, window, cfg.horizon_days, rng, cfg.paths)


def _run_block(args) -> tuple[list[tuple], list[np.datetime64]]:
    """Fit once at the block's first date, then simulate at each date of the block."""
    returns, model_id, points, cfg = args
    spec = parse_model_id(model_id)
    rows, failed = [], []
    fitted = None
    try:
        first = points[0]
        window = returns[first.end + 1 - cfg.window_days: first.end + 1]
        fitted = _fit(spec, window, cfg, derive_seed(cfg.seed, first.date, model_id))
    except (NumericalError, DataError) as exc:
        logger.warning("%s failed at %s: %s", model_id, points[0].date, exc)
        return rows, [p.date for p in points]
    for p in points:
        window = returns[p.end + 1 - cfg.window_days: p.end + 1]
        rng = np.random.default_rng([derive_seed(cfg.seed, p.date, model_id), 1])
        try:
            paths = _simulate(spec, fitted, window, cfg, rng)
        except (NumericalError, DataError) as exc:
            logger.warning("%s simulation failed at %s: %s", model_id, p.date, exc)
            failed.append(p.date)
            continue
        totals = compound(paths, axis=1)
        thresholds = np.quantile(totals, cfg.levels, axis=0)
        rows.append((p.date, thresholds))
    return rows, failed


def run_backtest(data: ReturnSeries, config: BacktestConfig, threads: int = 1) -> BacktestResult:
    """Weekly (or monthly) moving-window VaR backtest of every configured model."""
    if data.frequency != "daily":
        raise DataError("the backtest needs daily returns")
    points = evaluation_points(data, config.window_days, config.calendar)
    if not points:
        raise InsufficientDataError(
            f"{len(data)} daily returns do not cover a {config.window_days}-day window "
            "plus one complete evaluation period")
    dates = np.array([p.date for p in points])
    realized = np.array([compound(data.returns[p.next_start:p.next_stop]) for p in points])
    realized_series = ReturnSeries(dates, realized, data.asset_names, config.calendar)

    returns = np.ascontiguousarray(data.returns)
    stride = config.refit_stride
    jobs = [(returns, m, points[i:i + stride], config)
            for m in config.models for i in range(0, len(points), stride)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_run_block, jobs))
    else:
        outputs = [_run_block(j) for j in jobs]

    result = BacktestResult(config, data.asset_names, dates,
                            failures={m: [] for m in config.models})
    for (_, model_id, _, _), (rows, failed) in zip(jobs, outputs):
        result.failures[model_id].extend(failed)
        for date, thresholds in rows:
            for li, level in enumerate(config.levels):
                for aj, asset in enumerate(data.asset_names):
                    result.estimates.append(
                        VarEstimate(date, model_id, asset, level, float(thresholds[li, aj])))
    order = {m: i for i, m in enumerate(config.models)}
    result.estimates.sort(key=lambda e: (e.date, order[e.model], config.levels.index(e.level),
                                         data.asset_names.index(e.asset)))
    result.records = detect_breaches(result.estimates, realized_series)
    for m, bad in result.failures.items():
        if bad:
            logger.warning("%s: %d of %d evaluation dates failed", m, len(bad), len(points))
    return result


# ---------------------------------------------------------------- persistence

RECORD_FIELDS = ["date", "model", "asset", "level", "threshold", "realized", "breach", "excess", "status"]


def write_records(records, failures, asset_names, levels, path, delimiter: str = ",") -> None:
    """One row per (date, model, asset, level); failed cells carry status ``failed``."""
    rows = [[str(r.date), r.model, r.asset, repr(r.level), repr(r.threshold), repr(r.realized),
             "1" if r.breached else "0", repr(r.excess), "ok"] for r in records]
    for model, dates in (failures or {}).items():
        for d in dates:
            for level in levels:
                for asset in asset_names:
                    rows.append([str(d), model, asset, repr(float(level)), "", "", "", "", "failed"])
    models_seen = list(dict.fromkeys([r[1] for r in rows]))
    rows.sort(key=lambda r: (r[0], models_seen.index(r[1]), float(r[3]), r[2]))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        w.writerows(rows)


def read_records(path, delimiter: str = ",") -> tuple[list[BreachRecord], dict[str, list[np.datetime64]]]:
    records, failures = [], {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = set(RECORD_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                date = np.datetime64(row["date"], "D")
                if row["status"] == "failed":
                    bucket = failures.setdefault(row["model"], [])
                    if not bucket or bucket[-1] != date:
                        bucket.append(date)
                    continue
                records.append(BreachRecord(
                    date, row["model"], row["asset"], float(row["level"]), float(row["realized"]),
                    float(row["threshold"]), float(row["excess"]), row["breach"] == "1"))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
    return records, failures


def write_estimates(estimates, path, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["date", "model", "asset", "level", "threshold"])
        for e in estimates:
            w.writerow([str(e.date), e.model, e.asset, repr(e.level), repr(e.threshold)])
