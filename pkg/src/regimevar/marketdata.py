"""Price ingestion, simple returns, period aggregation and descriptive statistics."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InsufficientDataError, ParseError, SchemaError

logger = logging.getLogger(__name__)

FREQUENCIES = ("daily", "weekly", "monthly")
STATS_QUANTILES = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)


def _as_dates(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[D]")


@dataclass(frozen=True)
class PriceSeries:
    dates: np.ndarray
    levels: np.ndarray
    asset_names: tuple[str, ...]

    def __post_init__(self):
        dates = _as_dates(self.dates)
        levels = np.array(self.levels, dtype=float)
        if levels.ndim == 1:
            levels = levels[:, None]
        if levels.shape != (dates.shape[0], len(self.asset_names)):
            raise DataError(
                f"levels shape {levels.shape} does not match "
                f"{dates.shape[0]} dates x {len(self.asset_names)} assets"
            )
        if dates.size > 1 and np.any(np.diff(dates).astype(int) <= 0):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(levels)):
            raise DataError("levels contain missing or non-finite values")
        if np.any(levels <= 0):
            raise DataError("levels must be strictly positive")
        levels.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "asset_names", tuple(self.asset_names))

    def __len__(self) -> int:
        return self.dates.shape[0]


@dataclass(frozen=True)
class ReturnSeries:
    dates: np.ndarray
    returns: np.ndarray
    asset_names: tuple[str, ...]
    frequency: str = "daily"

    def __post_init__(self):
        dates = _as_dates(self.dates)
        returns = np.array(self.returns, dtype=float)
        if returns.ndim == 1:
            returns = returns[:, None]
        if returns.shape != (dates.shape[0], len(self.asset_names)):
            raise DataError(
                f"returns shape {returns.shape} does not match "
                f"{dates.shape[0]} dates x {len(self.asset_names)} assets"
            )
        if self.frequency not in FREQUENCIES:
            raise DataError(f"unknown frequency {self.frequency!r}")
        if np.any(returns <= -1.0):
            raise DataError("simple returns must be greater than -1")
        returns.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "asset_names", tuple(self.asset_names))

    def __len__(self) -> int:
        return self.dates.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def slice(self, start: int, stop: int) -> "ReturnSeries":
        return ReturnSeries(self.dates[start:stop], self.returns[start:stop],
                            self.asset_names, self.frequency)


def load_price_series(path, date_column: str | None = None,
                      columns: Sequence[str] | None = None,
                      delimiter: str = ",") -> PriceSeries:
    """Read a delimiter-separated file of index levels.

    The first column (or ``date_column``) holds ISO-8601 dates; the remaining
    columns (or ``columns``) hold strictly positive levels. Rows are sorted by
    date after parsing; duplicated dates are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        date_col = date_column or header[0]
        if date_col not in header:
            raise SchemaError(f"{path}: missing date column {date_col!r}")
        value_cols = list(columns) if columns else [h for h in header if h != date_col]
        missing = [c for c in value_cols if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        if not value_cols:
            raise SchemaError(f"{path}: no level columns")
        di = header.index(date_col)
        vi = [header.index(c) for c in value_cols]

        dates, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(rec)}", lineno)
            try:
                dates.append(dt.date.fromisoformat(rec[di].strip()))
            except ValueError:
                raise ParseError(f"{path}: unparsable date {rec[di]!r}", lineno) from None
            try:
                vals = [float(rec[i]) for i in vi]
            except ValueError:
                raise ParseError(f"{path}: non-numeric level", lineno) from None
            if any(not np.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {lineno}: missing or non-finite level")
            if any(v <= 0 for v in vals):
                raise DataError(f"{path}: row {lineno}: non-positive level")
            rows.append(vals)

    if not rows:
        raise InsufficientDataError(f"{path}: no data rows")
    order = sorted(range(len(dates)), key=dates.__getitem__)
    dates = [dates[i] for i in order]
    levels = np.array([rows[i] for i in order], dtype=float)
    for a, b in zip(dates, dates[1:]):
        if a == b:
            raise DataError(f"{path}: duplicate date {a.isoformat()}")
    return PriceSeries(np.array(dates, dtype="datetime64[D]"), levels, tuple(value_cols))


def write_price_series(prices: PriceSeries, path, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["date", *prices.asset_names])
        for d, row in zip(prices.dates, prices.levels):
            w.writerow([str(d), *(repr(float(v)) for v in row)])


def compute_returns(prices: PriceSeries) -> ReturnSeries:
    if len(prices) < 2:
        raise InsufficientDataError("at least two price rows are needed for a return")
    lv = prices.levels
    rets = (lv[1:] - lv[:-1]) / lv[:-1]
    return ReturnSeries(prices.dates[1:], rets, prices.asset_names, "daily")


def compound(returns: np.ndarray, axis: int = 0) -> np.ndarray:
    """Total return of consecutive simple returns: prod(1 + r) - 1."""
    return np.prod(1.0 + np.asarray(returns), axis=axis) - 1.0


def prices_from_returns(returns: ReturnSeries, base: float = 100.0,
                        start_date=None) -> PriceSeries:
    """Cumulatively compound returns from ``base``; inverse of compute_returns."""
    n = returns.n_assets
    levels = np.empty((len(returns) + 1, n))
    levels[0] = base
    levels[1:] = base * np.cumprod(1.0 + returns.returns, axis=0)
    if start_date is None:
        start_date = np.busday_offset(returns.dates[0], -1, roll="backward")
    dates = np.concatenate([[np.datetime64(start_date, "D")], returns.dates])
    return PriceSeries(dates, levels, returns.asset_names)


def period_keys(dates, calendar: str = "weekly") -> np.ndarray:
    """Label each date with the end of the calendar period it belongs to.

    Weekly periods close on Friday (days after a Friday roll to the next one);
    monthly periods close on the last day of the month.
    """
    d = _as_dates(dates)
    if calendar == "weekly":
        # 1970-01-01 was a Thursday, so (days + 3) % 7 is Monday=0 ... Sunday=6.
        weekday = (d.astype(np.int64) + 3) % 7
        return d + ((4 - weekday) % 7).astype("timedelta64[D]")
    if calendar == "monthly":
        return (d.astype("datetime64[M]") + 1).astype("datetime64[D]") - 1
    raise DataError(f"unknown calendar {calendar!r}")


def period_groups(dates, calendar: str = "weekly") -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive dates sharing a period key."""
    keys = period_keys(dates, calendar)
    if keys.size == 0:
        return []
    cuts = np.flatnonzero(keys[1:] != keys[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [keys.size]])
    return list(zip(starts.tolist(), stops.tolist()))


def aggregate_periods(daily: ReturnSeries, calendar: str = "weekly") -> ReturnSeries:
    if daily.frequency != "daily":
        raise DataError("period aggregation needs a daily series")
    groups = period_groups(daily.dates, calendar)
    if not groups:
        return ReturnSeries(daily.dates[:0], daily.returns[:0], daily.asset_names, calendar)
    keys = period_keys(daily.dates, calendar)
    step = np.timedelta64(7, "D") if calendar == "weekly" else None
    if step is not None:
        span = int((keys[-1] - keys[0]) / step) + 1
        skipped = span - len(groups)
        if skipped:
            logger.warning("%d calendar week(s) without observations skipped", skipped)
    out = np.array([compound(daily.returns[a:b]) for a, b in groups])
    dates = np.array([daily.dates[b - 1] for _, b in groups])
    return ReturnSeries(dates, out, daily.asset_names, calendar)


def aggregate_weekly(daily: ReturnSeries) -> ReturnSeries:
    """Compound daily returns into Friday-closing business weeks.

    The weekly observation is dated on the last trading day on or before the
    Friday, so holiday-shortened weeks keep whatever days they have.
    """
    return aggregate_periods(daily, "weekly")


def _sample_skewness(x: np.ndarray) -> float | None:
    n = x.shape[0]
    if n < 3:
        return None
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    if m2 == 0:
        return 0.0
    g1 = np.mean(d ** 3) / m2 ** 1.5
    return float(g1 * np.sqrt(n * (n - 1)) / (n - 2))


@dataclass(frozen=True)
class AssetStats:
    count: int
    mean: float
    std: float | None
    skewness: float | None
    min: float
    max: float
    quantiles: dict[float, float] = field(default_factory=dict)


@dataclass(frozen=True)
class StatsSummary:
    frequency: str
    assets: dict[str, AssetStats]

    def rows(self) -> list[list]:
        header = ["statistic", *self.assets]
        out = [header]
        for key in ("count", "mean", "std", "skewness", "min", "max"):
            out.append([key, *(getattr(s, key) for s in self.assets.values())])
        for q in STATS_QUANTILES:
            out.append([f"{round(q * 100):d}%", *(s.quantiles[q] for s in self.assets.values())])
        return out

    def to_dict(self) -> dict:
        return {
            "frequency": self.frequency,
            "assets": {
                name: {
                    "count": s.count, "mean": s.mean, "std": s.std, "skewness": s.skewness,
                    "min": s.min, "max": s.max,
                    "quantiles": {f"{q:g}": v for q, v in s.quantiles.items()},
                }
                for name, s in self.assets.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def descriptive_stats(series: ReturnSeries) -> StatsSummary:
    """Per-asset summary; std needs 2 and skewness 3 observations and is None below that."""
    if len(series) < 1:
        raise InsufficientDataError("descriptive statistics need at least one observation")
    assets = {}
    for j, name in enumerate(series.asset_names):
        x = series.returns[:, j]
        qs = np.quantile(x, STATS_QUANTILES, method="linear")
        assets[name] = AssetStats(
            count=int(x.shape[0]),
            mean=float(x.mean()),
            std=float(x.std(ddof=1)) if x.shape[0] > 1 else None,
            skewness=_sample_skewness(x),
            min=float(x.min()),
            max=float(x.max()),
            quantiles={q: float(v) for q, v in zip(STATS_QUANTILES, qs)},
        )
    return StatsSummary(series.frequency, assets)
