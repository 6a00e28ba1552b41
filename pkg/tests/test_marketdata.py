import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from regimevar.errors import DataError, InsufficientDataError, ParseError, SchemaError
from regimevar.marketdata import (PriceSeries, ReturnSeries, aggregate_weekly, compute_returns,
                                  descriptive_stats, load_price_series, period_keys,
                                  prices_from_returns, write_price_series)


def _write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "date,eq\n2020-01-01,100\n2020-01-02,110\n2020-01-03,99\n")
    ps = load_price_series(p)
    assert len(ps) == 3
    assert ps.asset_names == ("eq",)
    np.testing.assert_array_equal(ps.levels[:, 0], [100, 110, 99])


def test_load_sorts_rows(tmp_path):
    p = _write(tmp_path, "date,eq\n2020-01-03,99\n2020-01-01,100\n2020-01-02,110\n")
    ps = load_price_series(p)
    assert str(ps.dates[0]) == "2020-01-01"
    np.testing.assert_array_equal(ps.levels[:, 0], [100, 110, 99])


def test_duplicate_date_names_the_date(tmp_path):
    p = _write(tmp_path, "date,eq\n2020-01-01,100\n2020-01-01,101\n")
    with pytest.raises(DataError, match="2020-01-01"):
        load_price_series(p)


def test_zero_level_rejected(tmp_path):
    p = _write(tmp_path, "date,eq\n2020-01-01,100\n2020-01-02,0\n")
    with pytest.raises(DataError):
        load_price_series(p)


def test_bad_date_reports_row(tmp_path):
    p = _write(tmp_path, "date,eq\n2020-01-01,100\nnot-a-date,101\n")
    with pytest.raises(ParseError) as exc:
        load_price_series(p)
    assert exc.value.row == 3
    assert "row 3" in str(exc.value)


def test_missing_column_is_schema_error(tmp_path):
    p = _write(tmp_path, "date,eq\n2020-01-01,100\n")
    with pytest.raises(SchemaError):
        load_price_series(p, columns=["bond"])


def test_gap_cell_rejected(tmp_path):
    p = _write(tmp_path, "date,eq,bd\n2020-01-01,100,\n")
    with pytest.raises(DataError):
        load_price_series(p)


def test_semicolon_delimiter(tmp_path):
    p = _write(tmp_path, "date;eq\n2020-01-01;100\n2020-01-02;101\n")
    assert len(load_price_series(p, delimiter=";")) == 2


def _prices(levels, start="2020-01-06"):
    levels = np.asarray(levels, dtype=float)
    dates = np.busday_offset(np.datetime64(start), np.arange(len(levels)), roll="forward")
    return PriceSeries(dates, levels, ("a",) if levels.ndim == 1 else tuple(f"a{i}" for i in range(levels.shape[1])))


@pytest.mark.parametrize("levels, expected", [
    ([100, 110, 99], [0.10, -0.10]),
    ([5, 5, 5, 5], [0, 0, 0]),
    ([100, 50], [-0.5]),
])
def test_compute_returns(levels, expected):
    r = compute_returns(_prices(levels))
    np.testing.assert_allclose(r.returns[:, 0], expected, rtol=0, atol=1e-15)
    assert len(r) == len(levels) - 1


def test_compute_returns_needs_two_rows():
    with pytest.raises(InsufficientDataError):
        compute_returns(_prices([100]))


def _daily(values, start="2020-01-06"):
    values = np.asarray(values, dtype=float)
    dates = np.busday_offset(np.datetime64(start), np.arange(len(values)), roll="forward")
    return ReturnSeries(dates, values, ("a",))


def test_weekly_compounding():
    w = aggregate_weekly(_daily([0.01] * 5))
    assert len(w) == 1
    assert w.returns[0, 0] == pytest.approx(1.01 ** 5 - 1, abs=1e-15)
    assert abs(w.returns[0, 0] - 0.0510100501) < 1e-10
    assert str(w.dates[0]) == "2020-01-10"


def test_weekly_zeros():
    w = aggregate_weekly(_daily(np.zeros(15)))
    np.testing.assert_array_equal(w.returns, 0.0)
    assert len(w) == 3


def test_holiday_shortened_week():
    dates = np.array(["2020-01-06", "2020-01-07", "2020-01-08", "2020-01-09", "2020-01-10",
                      "2020-01-17"], dtype="datetime64[D]")
    d = ReturnSeries(dates, [0.0, 0.0, 0.0, 0.0, 0.0, 0.10], ("a",))
    w = aggregate_weekly(d)
    assert len(w) == 2
    assert w.returns[1, 0] == pytest.approx(0.10)


def test_weekly_skips_empty_weeks_with_warning(caplog):
    dates = np.array(["2020-01-06", "2020-01-20"], dtype="datetime64[D]")
    d = ReturnSeries(dates, [0.01, 0.02], ("a",))
    with caplog.at_level(logging.WARNING):
        w = aggregate_weekly(d)
    assert len(w) == 2
    assert "1 calendar week" in caplog.text


def test_weekend_dates_roll_to_next_friday():
    keys = period_keys(np.array(["2020-01-10", "2020-01-11", "2020-01-12", "2020-01-13"],
                                dtype="datetime64[D]"))
    assert [str(k) for k in keys] == ["2020-01-10", "2020-01-17", "2020-01-17", "2020-01-17"]


def test_stats_small():
    a = descriptive_stats(_daily([1.0, 2.0, 3.0])).assets["a"]
    assert a.mean == 2.0
    assert a.min == 1.0 and a.max == 3.0
    assert a.count == 3


def test_stats_symmetric_skew_zero():
    d = ReturnSeries(np.array(["2020-01-06", "2020-01-07", "2020-01-08"], dtype="datetime64[D]"),
                     [-0.05, 0.0, 0.05], ("a",))
    assert descriptive_stats(d).assets["a"].skewness == pytest.approx(0.0, abs=1e-15)


def test_stats_normal_quantile(rng):
    x = rng.standard_normal(10_001) * 0.1
    d = ReturnSeries(np.busday_offset(np.datetime64("2000-01-03"), np.arange(x.size), roll="forward"),
                     x, ("a",))
    q5 = descriptive_stats(d).assets["a"].quantiles[0.05] / 0.1
    assert abs(q5 - norm.ppf(0.05)) < 0.05


def test_stats_undefined_moments_are_absent():
    two = descriptive_stats(_daily([0.1, 0.2])).assets["a"]
    assert two.count == 2 and two.std == pytest.approx(np.sqrt(0.005)) and two.skewness is None
    one = descriptive_stats(_daily([0.1])).assets["a"]
    assert one.std is None and one.mean == 0.1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5, allow_nan=False), min_size=1, max_size=60))
def test_prices_returns_roundtrip(values):
    d = _daily(values)
    back = compute_returns(prices_from_returns(d))
    np.testing.assert_allclose(back.returns, d.returns, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(back.dates, d.dates)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2, allow_nan=False), min_size=3, max_size=80))
def test_quantiles_monotone_and_weekly_count(values):
    d = _daily(values)
    s = descriptive_stats(d).assets["a"]
    qs = list(s.quantiles.values())
    assert all(a <= b for a, b in zip(qs, qs[1:]))
    assert s.min <= qs[0] and qs[-1] <= s.max
    assert len(aggregate_weekly(d)) == len(np.unique(period_keys(d.dates)))


def test_write_then_load_roundtrip(tmp_path):
    ps = _prices([[100, 50], [101.5, 49.25], [99.0, 51.0]])
    write_price_series(ps, tmp_path / "x.csv")
    back = load_price_series(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.levels, ps.levels)
    assert back.asset_names == ps.asset_names
