"""Pairwise comparison of breach series: comp, paired t-test, dominance and report tables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .backtest import PERIODS_PER_YEAR, BreachRecord, breach_costs
from .errors import DataError


# ---------------------------------------------------------------- Student-t distribution

def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * float(betainc(0.5 * df, 0.5, df / (df + t * t)))
    return 1.0 - tail if t > 0 else tail


def student_t_sf(t: float, df: float) -> float:
    return student_t_cdf(-t, df)


# ---------------------------------------------------------------- breach sets

@dataclass(frozen=True)
class BreachSet:
    model: str
    dates: np.ndarray
    indicators: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        ind = np.asarray(self.indicators).astype(bool)
        if dates.shape != ind.shape or dates.ndim != 1:
            raise DataError("one breach indicator per evaluation date is required")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "indicators", ind)

    @property
    def count(self) -> int:
        return int(self.indicators.sum())

    @property
    def breach_dates(self) -> set:
        return set(self.dates[self.indicators].tolist())

    def __len__(self) -> int:
        return self.dates.shape[0]


def _check_aligned(a: BreachSet, b: BreachSet) -> None:
    if a.dates.shape != b.dates.shape or not np.array_equal(a.dates, b.dates):
        diff = sorted(set(a.dates.tolist()) ^ set(b.dates.tolist()))
        shown = ", ".join(str(d) for d in diff[:10])
        raise DataError(f"evaluation calendars of {a.model!r} and {b.model!r} differ"
                        + (f" at: {shown}" if diff else " in order"))


def comp_value(a: BreachSet, b: BreachSet) -> float:
    """1.0 if a breaches less often than b, 0.0 if more often, 0.5 on a tie."""
    _check_aligned(a, b)
    if a.count < b.count:
        return 1.0
    if a.count > b.count:
        return 0.0
    return 0.5


def paired_t_test(a: BreachSet, b: BreachSet, alternative: str = "two-sided") -> float:
    """p-value of the paired t-test on per-date indicator differences a_t - b_t.

    ``alternative`` is ``two-sided``, ``less`` (a breaches less) or ``greater``.
    Zero variance of the differences gives p = 1.
    """
    _check_aligned(a, b)
    N = len(a)
    if N < 2:
        raise DataError("the paired t-test needs at least two dates")
    d = a.indicators.astype(float) - b.indicators.astype(float)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return 1.0
    t = float(d.mean()) * math.sqrt(N) / sd
    df = N - 1
    if alternative == "two-sided":
        p = 2.0 * student_t_cdf(-abs(t), df)
    elif alternative == "less":
        p = student_t_cdf(t, df)
    elif alternative == "greater":
        p = student_t_cdf(-t, df)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return min(1.0, max(0.0, p))


def dominance(a: BreachSet, b: BreachSet) -> float | None:
    """|dates(a) & dates(b)| / |dates(a)| - 1; None when a never breaches."""
    _check_aligned(a, b)
    both = int(np.sum(a.indicators & b.indicators))
    if a.count == 0:
        return None
    return both / a.count - 1.0


@dataclass(frozen=True)
class ComparisonCell:
    comp: float
    pvalue: float
    dom: float | None

    def to_dict(self) -> dict:
        return {"comp": self.comp, "pvalue": self.pvalue, "dom": self.dom}


def compare(a: BreachSet, b: BreachSet, alternative: str = "two-sided") -> ComparisonCell:
    return ComparisonCell(comp_value(a, b), paired_t_test(a, b, alternative), dominance(a, b))


# ---------------------------------------------------------------- reports

def breach_sets_from_records(records, failures=None) -> dict[tuple[str, float], dict[str, BreachSet]]:
    """Group records into BreachSets per (asset, level), on a calendar common to all models.

    Dates at which any model failed are dropped for every model so that the
    pairwise statistics stay paired. Raises when models cover different dates.
    """
    failures = failures or {}
    cells: dict[tuple[str, float], dict[str, dict]] = {}
    for r in records:
        cells.setdefault((r.asset, r.level), {}).setdefault(r.model, {})[np.datetime64(r.date, "D")] = r.breached
    out = {}
    for key, by_model in cells.items():
        calendars = {m: set(d) | {np.datetime64(x, "D") for x in failures.get(m, [])}
                     for m, d in by_model.items()}
        ref_model, ref = next(iter(calendars.items()))
        for m, cal in calendars.items():
            if cal != ref:
                diff = sorted(cal ^ ref)
                shown = ", ".join(str(d) for d in diff[:10])
                raise DataError(f"models {ref_model!r} and {m!r} cover different dates: {shown}")
        common = sorted(set.intersection(*(set(d) for d in by_model.values())))
        dates = np.array(common, dtype="datetime64[D]")
        out[key] = {m: BreachSet(m, dates, [d[x] for x in common]) for m, d in by_model.items()}
    return out


@dataclass
class ComparisonReport:
    models: list[str]
    keys: list[tuple[str, float]]
    sets: dict[tuple[str, float], dict[str, BreachSet]]
    cells: dict[tuple[str, float], dict[tuple[str, str], ComparisonCell]]
    costs: dict[tuple[str, str, float], object] = field(default_factory=dict)
    periods_per_year: float = 52.0

    def breach_table(self) -> list[dict]:
        rows = []
        for asset, level in self.keys:
            for m in self.models:
                s = self.sets[(asset, level)][m]
                rows.append({"asset": asset, "level": level, "model": m, "breaches": s.count,
                             "evaluations": len(s), "perc": s.count / len(s) if len(s) else None})
        return rows

    def matrix_rows(self) -> list[dict]:
        rows = []
        for key in self.keys:
            for (a, b), cell in self.cells[key].items():
                rows.append({"asset": key[0], "level": key[1], "row": a, "column": b, **cell.to_dict()})
        return rows

    def cost_rows(self) -> list[dict]:
        rows = []
        rank = {m: i for i, m in enumerate(self.models)}
        ordered = sorted(self.costs.items(), key=lambda kv: (kv[0][2], kv[0][1], rank.get(kv[0][0], 0)))
        for (m, asset, level), c in ordered:
            rows.append({"asset": asset, "level": level, "model": m, "breaches": c.breaches,
                         "acc_loss_per_year": c.accumulated_per_year,
                         "avg_loss_per_breach": c.average_per_breach})
        return rows

    def comp_totals(self) -> list[dict]:
        """Row sums of comp over all column models, per (asset, level)."""
        rows = []
        for key in self.keys:
            for m in self.models:
                total = sum(c.comp for (a, _), c in self.cells[key].items() if a == m)
                rows.append({"asset": key[0], "level": key[1], "model": m, "comp_total": total})
        return rows

    def to_dict(self) -> dict:
        return {"models": self.models, "breaches": self.breach_table(),
                "comparisons": self.matrix_rows(), "costs": self.cost_rows(),
                "comp_totals": self.comp_totals()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def comparison_matrix(sets: dict[tuple[str, float], dict[str, BreachSet]],
                      records: list[BreachRecord] | None = None, calendar: str = "weekly",
                      cost_mode: str = "excess", alternative: str = "two-sided") -> ComparisonReport:
    """Every ordered pair of distinct models, per (asset, level)."""
    models: list[str] = []
    for by_model in sets.values():
        for m in by_model:
            if m not in models:
                models.append(m)
    if len(models) < 2:
        raise DataError("at least two models are needed for a comparison")
    keys = sorted(sets, key=lambda k: (k[1], k[0]))
    cells = {}
    for key in keys:
        by_model = sets[key]
        cells[key] = {(a, b): compare(by_model[a], by_model[b], alternative)
                      for a in models for b in models if a != b and a in by_model and b in by_model}
    costs = {}
    ppy = PERIODS_PER_YEAR[calendar]
    if records:
        kept = {k: set(s[next(iter(s))].dates) for k, s in sets.items()}
        usable = [r for r in records if np.datetime64(r.date, "D") in kept.get((r.asset, r.level), ())]
        n_dates = max((len(next(iter(s.values()))) for s in sets.values()), default=0)
        if n_dates:
            costs = breach_costs(usable, n_dates / ppy, cost_mode)
    return ComparisonReport(models, keys, sets, cells, costs, ppy)


def comp_totals(pairs: dict[tuple, tuple[BreachSet, BreachSet]], row_of=lambda key: key[:2]) -> dict:
    """Aggregate comp of variant A over variant B (and B over A) per report row.

    ``pairs`` maps a key such as (level, asset class, network, region) to the
    pair (A, B). ``row_of`` maps that key to its report row; each row's two
    totals sum to the number of comparisons in it.
    """
    out: dict = {}
    for key, (a, b) in pairs.items():
        row = row_of(key)
        ta, tb = out.get(row, (0.0, 0.0))
        out[row] = (ta + comp_value(a, b), tb + comp_value(b, a))
    return out
