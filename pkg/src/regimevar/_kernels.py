"""Compiled inner loops for time recursions (HMM smoothing, LSTM sequences)."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def forward_backward_scaled(log_b, pi0, trans):
    """Scaled forward-backward on per-step emission log-densities.

    Returns (gamma, xi_sum, loglik, ok). ``ok`` is False when a forward step
    loses all probability mass (zero likelihood under the parameters).
    """
    T, k = log_b.shape
    alpha = np.zeros((T, k))
    beta = np.ones((T, k))
    scale = np.zeros(T)
    b = np.empty((T, k))
    loglik = 0.0
    for t in range(T):
        top = log_b[t, 0]
        for i in range(1, k):
            if log_b[t, i] > top:
                top = log_b[t, i]
        for i in range(k):
            b[t, i] = np.exp(log_b[t, i] - top)
        loglik += top

    s = 0.0
    for i in range(k):
        alpha[0, i] = pi0[i] * b[0, i]
        s += alpha[0, i]
    if not s > 0.0:
        return alpha, np.zeros((k, k)), -np.inf, False
    scale[0] = s
    for i in range(k):
        alpha[0, i] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(k):
            acc = 0.0
            for i in range(k):
                acc += alpha[t - 1, i] * trans[i, j]
            alpha[t, j] = acc * b[t, j]
            s += alpha[t, j]
        if not s > 0.0:
            return alpha, np.zeros((k, k)), -np.inf, False
        scale[t] = s
        for j in range(k):
            alpha[t, j] /= s
    for t in range(T):
        loglik += np.log(scale[t])

    for t in range(T - 2, -1, -1):
        for i in range(k):
            acc = 0.0
            for j in range(k):
                acc += trans[i, j] * b[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / scale[t + 1]

    gamma = np.empty((T, k))
    for t in range(T):
        s = 0.0
        for i in range(k):
            gamma[t, i] = alpha[t, i] * beta[t, i]
            s += gamma[t, i]
        for i in range(k):
            gamma[t, i] /= s

    xi_sum = np.zeros((k, k))
    for t in range(T - 1):
        for i in range(k):
            for j in range(k):
                xi_sum[i, j] += (alpha[t, i] * trans[i, j] * b[t + 1, j]
                                 * beta[t + 1, j] / scale[t + 1])
    return gamma, xi_sum, loglik, True


@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def lstm_forward(xw, w_h, h0, c0):
    """LSTM over a sequence given precomputed input projections.

    ``xw[t] = x_t @ W_x + b`` (gate order i, f, g, o). Returns hidden states,
    cell states and post-activation gates, all needed by the backward pass.
    """
    T = xw.shape[0]
    H = h0.shape[0]
    hs = np.empty((T, H))
    cs = np.empty((T, H))
    gates = np.empty((T, 4 * H))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        for q in range(4 * H):
            acc = xw[t, q]
            for p in range(H):
                acc += h[p] * w_h[p, q]
            if q < 2 * H or q >= 3 * H:
                gates[t, q] = _sigmoid(acc)
            else:
                gates[t, q] = np.tanh(acc)
        for p in range(H):
            c[p] = gates[t, H + p] * c[p] + gates[t, p] * gates[t, 2 * H + p]
            h[p] = gates[t, 3 * H + p] * np.tanh(c[p])
            cs[t, p] = c[p]
            hs[t, p] = h[p]
    return hs, cs, gates


@njit(cache=True, nogil=True)
def lstm_backward(d_hs, hs, cs, gates, w_h, h0, c0):
    """Backpropagation through time for :func:`lstm_forward`.

    Returns (d_z, d_w_h, d_h0, d_c0) where ``d_z[t]`` is the gradient with
    respect to the pre-activation gate vector at step t; input-side weight
    and bias gradients follow from it by a single matrix product.
    """
    T, H = hs.shape
    d_z = np.empty((T, 4 * H))
    d_w_h = np.zeros((H, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        for p in range(H):
            i = gates[t, p]
            f = gates[t, H + p]
            g = gates[t, 2 * H + p]
            o = gates[t, 3 * H + p]
            tc = np.tanh(cs[t, p])
            c_prev = cs[t - 1, p] if t > 0 else c0[p]
            dh = d_hs[t, p] + dh_next[p]
            dc = dc_next[p] + dh * o * (1.0 - tc * tc)
            d_z[t, p] = dc * g * i * (1.0 - i)
            d_z[t, H + p] = dc * c_prev * f * (1.0 - f)
            d_z[t, 2 * H + p] = dc * i * (1.0 - g * g)
            d_z[t, 3 * H + p] = dh * tc * o * (1.0 - o)
            dc_next[p] = dc * f
        for p in range(H):
            h_prev = hs[t - 1, p] if t > 0 else h0[p]
            acc = 0.0
            for q in range(4 * H):
                d_w_h[p, q] += h_prev * d_z[t, q]
                acc += w_h[p, q] * d_z[t, q]
            dh_next[p] = acc
    return d_z, d_w_h, dh_next, dc_next
