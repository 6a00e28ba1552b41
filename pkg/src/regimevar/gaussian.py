"""Multivariate Gaussians carried by their lower Cholesky factor, and mixtures of them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DataError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


def pack_lower(L: np.ndarray) -> list[float]:
    """Row-major lower triangle of a square matrix."""
    n = L.shape[0]
    return [float(L[i, j]) for i in range(n) for j in range(i + 1)]


def unpack_lower(values, n: int) -> np.ndarray:
    values = list(values)
    if len(values) != n * (n + 1) // 2:
        raise DataError(f"expected {n * (n + 1) // 2} packed factor entries, got {len(values)}")
    L = np.zeros((n, n))
    idx = 0
    for i in range(n):
        for j in range(i + 1):
            L[i, j] = values[idx]
            idx += 1
    return L


@dataclass(frozen=True)
class MvGaussian:
    """N(mean, L L^T).

    ``strict=False`` admits a degenerate (e.g. all-zero) factor; only the
    sampler is meaningful for such an object.
    """

    mean: np.ndarray
    cov_factor: np.ndarray
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        L = np.array(self.cov_factor, dtype=float)
        if L.ndim == 0:
            L = L.reshape(1, 1)
        n = mean.shape[0]
        if L.shape != (n, n):
            raise DataError(f"factor shape {L.shape} does not match mean length {n}")
        if np.any(np.triu(L, 1) != 0):
            raise DataError("covariance factor must be lower triangular")
        if self.strict and not np.all(np.diag(L) > 0):
            raise NumericalError("covariance factor needs a strictly positive diagonal")
        mean.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_factor", L)

    @classmethod
    def from_cov(cls, mean, cov) -> "MvGaussian":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NumericalError("covariance is not positive definite") from None
        return cls(mean, L)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov_factor": pack_lower(self.cov_factor)}

    @classmethod
    def from_dict(cls, d: dict) -> "MvGaussian":
        mean = np.asarray(d["mean"], dtype=float)
        return cls(mean, unpack_lower(d["cov_factor"], mean.shape[0]))


def log_density(g: MvGaussian, x) -> np.ndarray | float:
    """Log pdf at a point (vector) or at each row of a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != g.dim:
        raise DataError(f"point dimension {X.shape[-1]} != Gaussian dimension {g.dim}")
    z = solve_triangular(g.cov_factor, (X - g.mean).T, lower=True, check_finite=False)
    half_logdet = np.sum(np.log(np.diag(g.cov_factor)))
    out = -0.5 * (g.dim * LOG_2PI + np.sum(z * z, axis=0)) - half_logdet
    return float(out[0]) if single else out


def sample(g: MvGaussian, rng: np.random.Generator, size: int | tuple | None = None) -> np.ndarray:
    """mean + L z with z i.i.d. standard normal drawn from ``rng``."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    z = rng.standard_normal(shape + (g.dim,))
    return g.mean + z @ g.cov_factor.T


def fit_gaussian(samples) -> MvGaussian:
    """Sample mean and unbiased sample covariance, returned in factored form."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m, n = X.shape
    if m <= n:
        raise DataError(f"need more samples ({m}) than dimensions ({n})")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(cov) / n
        try:
            L = np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise NumericalError("sample covariance is singular") from None
    return MvGaussian(mean, L)


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    components: tuple[MvGaussian, ...]

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if w.shape[0] != len(comps) or not comps:
            raise DataError("one weight per component is required")
        if np.any(w < 0) or w.sum() <= 0:
            raise DataError("mixture weights must be non-negative with positive total")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise DataError("mixture components differ in dimension")
        w = w / w.sum()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


def mixture_log_density(mix: GaussianMixture, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    with np.errstate(divide="ignore"):
        logw = np.log(mix.weights)
    comp = np.stack([log_density(c, X) for c in mix.components], axis=1) + logw
    top = comp.max(axis=1, keepdims=True)
    out = (top + np.log(np.exp(comp - top).sum(axis=1, keepdims=True)))[:, 0]
    return float(out[0]) if single else out


def mixture_sample(mix: GaussianMixture, rng: np.random.Generator, size: int) -> np.ndarray:
    labels = categorical(np.broadcast_to(mix.weights, (size, mix.k)), rng)
    means = np.stack([c.mean for c in mix.components])
    factors = np.stack([c.cov_factor for c in mix.components])
    z = rng.standard_normal((size, mix.dim))
    return means[labels] + np.einsum("pij,pj->pi", factors[labels], z)


def categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs`` using a single uniform each."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
