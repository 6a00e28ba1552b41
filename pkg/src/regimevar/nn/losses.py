"""Mixture sequence likelihood with lookahead, and the regime-balance penalty."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import DataError, NumericalError
from ..gaussian import LOG_2PI
from . import autodiff as ad
from .autodiff import Tensor
from .params import factor_from_raw


def gaussian_logpdf(x, means, chol_raw) -> Tensor:
    """Log-density of every row of ``x`` under each of k Gaussians -> [T x k].

    ``chol_raw`` is the unconstrained [k x n x n] factor storage (log diagonal).
    """
    X = np.asarray(getattr(x, "data", x), dtype=float)
    means, chol_raw = ad.as_tensor(means), ad.as_tensor(chol_raw)
    k, n = means.data.shape
    if X.shape[1] != n:
        raise DataError(f"observation width {X.shape[1]} != mixture dimension {n}")
    L = factor_from_raw(chol_raw.data)
    T = X.shape[0]
    out = np.empty((T, k))
    zs = []
    for i in range(k):
        z = solve_triangular(L[i], (X - means.data[i]).T, lower=True, check_finite=False)
        out[:, i] = -0.5 * (n * LOG_2PI + np.sum(z * z, axis=0)) - np.sum(np.log(np.diag(L[i])))
        zs.append(z)

    def back(g):
        g_mu = np.zeros_like(means.data)
        g_raw = np.zeros_like(chol_raw.data)
        diag = np.arange(n)
        for i in range(k):
            z = zs[i]
            u = solve_triangular(L[i], z, lower=True, trans="T", check_finite=False)
            gi = g[:, i]
            ug = u * gi
            g_mu[i] = ug.sum(axis=1)
            gL = np.tril(ug @ z.T)
            gL[diag, diag] -= gi.sum() / L[i][diag, diag]
            gr = np.tril(gL, -1)
            gr[diag, diag] = gL[diag, diag] * L[i][diag, diag]
            g_raw[i] = gr
        return g_mu, g_raw

    return ad.op(out, (means, chol_raw), back)


def mixture_nll(log_phi, log_dens, rows: np.ndarray, lookahead: int) -> Tensor:
    """-sum_r sum_{j=1..J} log sum_i phi_i(t_r) N(x_{t_r + j}; mu_i, Sigma_i).

    ``log_phi[r]`` are log regime weights produced at day ``rows[r]``;
    ``log_dens[t, i]`` is the log-density of day t under regime i. Terms whose
    target day falls beyond the window are dropped.
    """
    log_phi, log_dens = ad.as_tensor(log_phi), ad.as_tensor(log_dens)
    rows = np.asarray(rows, dtype=np.int64)
    T = log_dens.data.shape[0]
    if lookahead < 1:
        raise DataError("lookahead must be at least 1")
    total = 0.0
    cache = []
    for j in range(1, lookahead + 1):
        valid = rows + j < T
        if not valid.any():
            continue
        r_idx = np.flatnonzero(valid)
        tgt = rows[valid] + j
        a = log_phi.data[r_idx] + log_dens.data[tgt]
        top = a.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(top)):
            bad = int(tgt[np.flatnonzero(~np.isfinite(top[:, 0]))[0]])
            raise NumericalError(f"non-finite mixture density at day index {bad}")
        w = np.exp(a - top)
        s = w.sum(axis=1, keepdims=True)
        total -= float(np.sum(top[:, 0] + np.log(s[:, 0])))
        cache.append((r_idx, tgt, w / s))

    def back(g):
        g_phi = np.zeros_like(log_phi.data)
        g_dens = np.zeros_like(log_dens.data)
        for r_idx, tgt, resp in cache:
            g_phi[r_idx] -= g * resp
            g_dens[tgt] -= g * resp
        return g_phi, g_dens

    return ad.op(total, (log_phi, log_dens), back)


def sequence_loss(log_phi, means, chol_raw, obs, rows, lookahead: int) -> Tensor:
    """Negative log-likelihood of ``obs`` under the regime mixture with lookahead J."""
    return mixture_nll(log_phi, gaussian_logpdf(obs, means, chol_raw), rows, lookahead)


def balance_regularizer(phi) -> Tensor:
    """sum_i (mean_t phi_i(t))^2, which lies in [1/k, 1] for row-stochastic phi."""
    return ad.total(ad.square(ad.mean(phi, axis=0)))


def regularized_loss(base, reg, weight: float = 1.0) -> Tensor:
    """(1 + weight * reg) * base; weight 0 returns the base loss unchanged."""
    if weight == 0:
        return ad.as_tensor(base)
    return ad.mul(ad.add(ad.mul(reg, weight), 1.0), base)
