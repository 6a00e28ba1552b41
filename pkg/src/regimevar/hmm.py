"""k-regime Gaussian hidden Markov model: smoothing, Baum-Welch, Monte-Carlo paths."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import forward_backward_scaled
from .errors import DataError, NumericalError, RegimeCollapseError
from .gaussian import MvGaussian, categorical, fit_gaussian, log_density

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HmmParams:
    pi0: np.ndarray
    trans: np.ndarray
    regimes: tuple[MvGaussian, ...]

    def __post_init__(self):
        pi0 = np.array(self.pi0, dtype=float).reshape(-1)
        trans = np.atleast_2d(np.array(self.trans, dtype=float))
        regimes = tuple(self.regimes)
        k = len(regimes)
        if k < 1:
            raise DataError("at least one regime is required")
        if pi0.shape != (k,) or trans.shape != (k, k):
            raise DataError(f"pi0/trans shapes {pi0.shape}/{trans.shape} do not match k={k}")
        if len({g.dim for g in regimes}) != 1:
            raise DataError("regime Gaussians differ in dimension")
        if np.any(trans < 0) or np.any(trans > 1) or np.any(pi0 < 0):
            raise DataError("probabilities must lie in [0, 1]")
        if np.max(np.abs(trans.sum(axis=1) - 1.0)) > 1e-12:
            raise DataError("transition rows must sum to 1")
        if abs(pi0.sum() - 1.0) > 1e-12:
            raise DataError("pi0 must sum to 1")
        for a in (pi0, trans):
            a.setflags(write=False)
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "regimes", regimes)

    @property
    def k(self) -> int:
        return len(self.regimes)

    @property
    def dim(self) -> int:
        return self.regimes[0].dim

    def permute(self, order) -> "HmmParams":
        """Relabel regimes so that new regime i is old regime order[i]."""
        order = np.asarray(order)
        return HmmParams(self.pi0[order], self.trans[np.ix_(order, order)],
                         tuple(self.regimes[i] for i in order))

    def to_dict(self) -> dict:
        return {
            "pi0": self.pi0.tolist(),
            "trans": self.trans.reshape(-1).tolist(),
            "regimes": [g.to_dict() for g in self.regimes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        regimes = tuple(MvGaussian.from_dict(r) for r in d["regimes"])
        k = len(regimes)
        return cls(np.asarray(d["pi0"]), np.asarray(d["trans"]).reshape(k, k), regimes)


@dataclass(frozen=True)
class SmoothedPath:
    probs: np.ndarray
    log_likelihood: float


@dataclass
class FitTrace:
    """Log-likelihood after each EM iteration (index 0 is the initial guess)."""

    log_likelihoods: list[float] = field(default_factory=list)
    converged: bool = False


def _obs_matrix(obs) -> np.ndarray:
    X = np.asarray(getattr(obs, "returns", obs), dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _emission_logs(params: HmmParams, X: np.ndarray) -> np.ndarray:
    if X.shape[1] != params.dim:
        raise DataError(f"observation dimension {X.shape[1]} != model dimension {params.dim}")
    return np.stack([log_density(g, X) for g in params.regimes], axis=1)


def _smooth(params: HmmParams, X: np.ndarray):
    gamma, xi_sum, ll, ok = forward_backward_scaled(
        _emission_logs(params, X), params.pi0, params.trans)
    if not ok:
        raise NumericalError("observations have zero likelihood under the HMM parameters")
    return gamma, xi_sum, ll


def forward_backward(params: HmmParams, obs) -> SmoothedPath:
    """Smoothed regime posteriors P(S_t = i | x_1..x_T) and the sequence log-likelihood."""
    X = _obs_matrix(obs)
    if X.shape[0] < 1:
        raise DataError("empty observation window")
    gamma, _, ll = _smooth(params, X)
    return SmoothedPath(gamma, float(ll))


def _initial_params(X: np.ndarray, k: int, rng: np.random.Generator) -> HmmParams:
    n = X.shape[1]
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    sd = np.sqrt(np.diag(cov))
    L = np.linalg.cholesky(cov)
    regimes = tuple(MvGaussian(mean + 0.5 * sd * rng.uniform(-1.0, 1.0, n), L) for _ in range(k))
    trans = np.full((k, k), 0.1 / (k - 1))
    np.fill_diagonal(trans, 0.9)
    return HmmParams(np.full(k, 1.0 / k), trans, regimes)


def _weighted_factor(X: np.ndarray, w: np.ndarray, mu: np.ndarray) -> np.ndarray:
    D = X - mu
    cov = (D * w[:, None]).T @ D / w.sum()
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        n = cov.shape[0]
        jitter = max(1e-10, 1e-10 * np.trace(cov) / n)
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise RegimeCollapseError("regime covariance is singular") from None


def _m_step(X: np.ndarray, gamma: np.ndarray, xi_sum: np.ndarray) -> HmmParams:
    n = X.shape[1]
    mass = gamma.sum(axis=0)
    if np.any(mass < n + 1):
        raise RegimeCollapseError(
            f"regime responsibility mass {mass.min():.3g} below {n + 1} effective samples")
    pi0 = gamma[0] / gamma[0].sum()
    trans = xi_sum / xi_sum.sum(axis=1, keepdims=True)
    trans = trans / trans.sum(axis=1, keepdims=True)
    regimes = []
    for i in range(gamma.shape[1]):
        w = gamma[:, i]
        mu = w @ X / mass[i]
        regimes.append(MvGaussian(mu, _weighted_factor(X, w, mu)))
    return HmmParams(pi0, trans, tuple(regimes))


def sort_regimes(params: HmmParams, coordinate: int = 0) -> HmmParams:
    """Order regimes by mean of ``coordinate`` descending (bull regime first)."""
    order = np.argsort([-g.mean[coordinate] for g in params.regimes], kind="stable")
    return params.permute(order)


def baum_welch(obs, k: int, rng: np.random.Generator, tol: float = 1e-6,
               max_iter: int = 500, sort_coordinate: int | None = 0,
               trace: FitTrace | None = None) -> HmmParams:
    """Fit an HMM by expectation-maximisation.

    Iterates until the log-likelihood gain drops below ``tol`` or after
    ``max_iter`` iterations. ``k == 1`` is the plain sample mean/covariance fit.
    Raises :class:`RegimeCollapseError` when a regime's responsibility mass
    falls below dimension + 1 samples; callers retry with another seed.
    """
    X = _obs_matrix(obs)
    T, n = X.shape
    if k < 1:
        raise DataError("k must be at least 1")
    if T <= k * (n + 1):
        raise DataError(f"window of {T} observations is too short for k={k}, n={n}")
    if k == 1:
        params = HmmParams(np.ones(1), np.ones((1, 1)), (fit_gaussian(X),))
        if trace is not None:
            trace.log_likelihoods.append(forward_backward(params, X).log_likelihood)
            trace.converged = True
        return params

    params = _initial_params(X, k, rng)
    gamma, xi_sum, ll = _smooth(params, X)
    history = trace.log_likelihoods if trace is not None else []
    history.append(float(ll))
    converged = False
    for _ in range(max_iter):
        params = _m_step(X, gamma, xi_sum)
        gamma, xi_sum, new_ll = _smooth(params, X)
        history.append(float(new_ll))
        if new_ll < ll - 1e-9:
            logger.debug("EM log-likelihood decreased by %.3g", ll - new_ll)
        done = abs(new_ll - ll) < tol
        ll = new_ll
        if done:
            converged = True
            break
    if trace is not None:
        trace.converged = converged
    if sort_coordinate is not None:
        params = sort_regimes(params, sort_coordinate)
    return params


def simulate_hmm(params: HmmParams, last_smoothed, horizon: int, rng: np.random.Generator,
                 n_paths: int | None = None) -> np.ndarray:
    """Monte-Carlo return paths from an HMM.

    The starting regime is drawn from ``last_smoothed`` (the smoothed
    distribution on the last observed day); each simulated day first moves
    the regime along the transition matrix and then draws that day's return
    from the regime Gaussian. Returns ``(horizon, n)`` for a single path or
    ``(n_paths, horizon, n)``.
    """
    p0 = np.asarray(last_smoothed, dtype=float)
    if p0.shape != (params.k,) or abs(p0.sum() - 1.0) > 1e-8:
        raise DataError("last_smoothed must be a probability vector over the regimes")
    paths = 1 if n_paths is None else int(n_paths)
    n = params.dim
    out = np.empty((paths, horizon, n))
    if horizon > 0:
        means = np.stack([g.mean for g in params.regimes])
        factors = np.stack([g.cov_factor for g in params.regimes])
        state = categorical(np.broadcast_to(p0, (paths, params.k)), rng)
        for i in range(horizon):
            state = categorical(params.trans[state], rng)
            z = rng.standard_normal((paths, n))
            out[:, i] = means[state] + np.einsum("pij,pj->pi", factors[state], z)
    return out[0] if n_paths is None else out
