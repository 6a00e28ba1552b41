"""Synthetic return generators: i.i.d. Gaussian and Markov regime-switching series."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .gaussian import MvGaussian, categorical
from .hmm import HmmParams
from .marketdata import ReturnSeries


def business_dates(count: int, start: str = "2000-01-03") -> np.ndarray:
    """``count`` consecutive weekdays starting at ``start`` (rolled forward to a weekday)."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward").astype("datetime64[D]")


def iid_gaussian(mean, cov, days: int, rng: np.random.Generator,
                 asset_names=None, start: str = "2000-01-03") -> ReturnSeries:
    g = MvGaussian.from_cov(np.atleast_1d(mean), np.atleast_2d(cov))
    x = g.mean + rng.standard_normal((days, g.dim)) @ g.cov_factor.T
    names = tuple(asset_names) if asset_names else tuple(f"asset{i}" for i in range(g.dim))
    return ReturnSeries(business_dates(days, start), x, names)


def regime_switching(params: HmmParams, days: int, rng: np.random.Generator,
                     asset_names=None, start: str = "2000-01-03") -> tuple[ReturnSeries, np.ndarray]:
    """Sample a regime path from (pi0, A) and one Gaussian draw per day; returns (series, states)."""
    if days < 1:
        raise DataError("days must be positive")
    states = np.empty(days, dtype=np.int64)
    states[0] = categorical(params.pi0, rng)[0]
    for t in range(1, days):
        states[t] = categorical(params.trans[states[t - 1]], rng)[0]
    means = np.stack([g.mean for g in params.regimes])
    factors = np.stack([g.cov_factor for g in params.regimes])
    z = rng.standard_normal((days, params.dim))
    x = means[states] + np.einsum("tij,tj->ti", factors[states], z)
    names = tuple(asset_names) if asset_names else tuple(f"asset{i}" for i in range(params.dim))
    return ReturnSeries(business_dates(days, start), x, names), states


def _stationary(trans: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(trans.T)
    p = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return p / p.sum()


def two_regime_equity(p: float = 0.98, q: float = 0.98) -> HmmParams:
    """Univariate bull/bear equity model: +0.0004 / 0.8% and -0.0008 / 2.0% daily."""
    trans = np.array([[p, 1 - p], [1 - q, q]])
    regimes = (MvGaussian.from_cov([0.0004], [[0.008 ** 2]]),
               MvGaussian.from_cov([-0.0008], [[0.020 ** 2]]))
    return HmmParams(_stationary(trans), trans, regimes)


def equity_bond_regimes(p: float = 0.99, q: float = 0.97) -> HmmParams:
    """Equity and long-bond returns with a calm bull regime and a volatile bear regime.

    The bear regime is rarer (stationary share (1 - p) / (2 - p - q)), has a
    negative equity drift, triple the equity volatility and a stronger
    flight-to-quality correlation, so the equity mixture is negatively skewed.
    """
    def regime(mu, sd, rho):
        cov = np.array([[sd[0] ** 2, rho * sd[0] * sd[1]], [rho * sd[0] * sd[1], sd[1] ** 2]])
        return MvGaussian.from_cov(mu, cov)

    trans = np.array([[p, 1 - p], [1 - q, q]])
    regimes = (regime([0.0006, 0.0002], [0.007, 0.003], -0.2),
               regime([-0.0015, 0.0004], [0.021, 0.005], -0.4))
    return HmmParams(_stationary(trans), trans, regimes)


EQUITY_BOND_NAMES = ("equity", "long_bond")
