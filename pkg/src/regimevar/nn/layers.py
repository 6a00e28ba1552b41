"""Dense/tanh, causal dilated convolution, LSTM and softmax-head layers.

Weights live in a :class:`ParamStore` under ``"<layer_id>.W"`` and
``"<layer_id>.b"``. Initialisers draw every tensor of a layer from
U(-1/sqrt(i), 1/sqrt(i)) with i the layer's number of input units.
"""

from __future__ import annotations

import numpy as np

from .._kernels import lstm_backward, lstm_forward
from ..errors import DataError
from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore

KERNEL = 3


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_dense(store: ParamStore, layer_id: str, n_in: int, n_out: int,
               rng: np.random.Generator) -> None:
    store.add(f"{layer_id}.W", uniform_fan_in(rng, (n_in, n_out), n_in))
    store.add(f"{layer_id}.b", uniform_fan_in(rng, (n_out,), n_in))


def init_conv(store: ParamStore, layer_id: str, c_in: int, c_out: int,
              rng: np.random.Generator, kernel: int = KERNEL) -> None:
    fan_in = c_in * kernel
    store.add(f"{layer_id}.W", uniform_fan_in(rng, (kernel, c_in, c_out), fan_in))
    store.add(f"{layer_id}.b", uniform_fan_in(rng, (c_out,), fan_in))


def init_lstm(store: ParamStore, layer_id: str, n_in: int, hidden: int,
              rng: np.random.Generator) -> None:
    fan_in = n_in + hidden
    store.add(f"{layer_id}.W", uniform_fan_in(rng, (n_in + hidden, 4 * hidden), fan_in))
    store.add(f"{layer_id}.b", uniform_fan_in(rng, (4 * hidden,), fan_in))


def reinit_uniform(store: ParamStore, names, fan_in: dict[str, int], rng: np.random.Generator) -> None:
    for name in names:
        store.set(name, uniform_fan_in(rng, store.value(name).shape, fan_in[name]))


def _check_in(store: ParamStore, layer_id: str, width: int, axis: int = 0) -> tuple[Tensor, Tensor]:
    W, b = store[f"{layer_id}.W"], store[f"{layer_id}.b"]
    if W.data.shape[axis] != width:
        raise DataError(f"{layer_id}: input width {width} != layer in-dim {W.data.shape[axis]}")
    return W, b


def dense_forward(store: ParamStore, layer_id: str, x, activation: bool = True) -> Tensor:
    """``tanh(x W + b)`` (or the affine map alone); x is a vector or a batch of rows."""
    x = ad.as_tensor(x)
    W, b = _check_in(store, layer_id, x.data.shape[-1])
    z = ad.matmul(x, W) + b
    return ad.tanh(z) if activation else z


def causal_dilated_conv_forward(store: ParamStore, layer_id: str, seq, dilation: int) -> Tensor:
    """Kernel-3 causal convolution: out[t] = b + sum_k x[t - (2-k) d] W[k].

    Tap 2 reads the current step, taps 1 and 0 read d and 2d steps back;
    positions before the start of the sequence read zeros.
    """
    x = ad.as_tensor(seq)
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise DataError("convolution input must be a non-empty [T x channels] matrix")
    W, b = _check_in(store, layer_id, x.data.shape[1], axis=1)
    K = W.data.shape[0]
    T = x.data.shape[0]
    shifts = [(K - 1 - k) * dilation for k in range(K)]

    def shifted(a, s):
        if s == 0:
            return a
        out = np.zeros_like(a)
        if s < a.shape[0]:
            out[s:] = a[:-s]
        return out

    xs = [shifted(x.data, s) for s in shifts]
    y = b.data + sum(xs[k] @ W.data[k] for k in range(K))

    def back(g):
        gx = np.zeros_like(x.data)
        gW = np.empty_like(W.data)
        for k, s in enumerate(shifts):
            gW[k] = xs[k].T @ g
            if s < T:
                gx[: T - s] += g[s:] @ W.data[k].T
        return gx, gW, g.sum(axis=0)

    return ad.op(y, (x, W, b), back)


def lstm_step(store: ParamStore, layer_id: str, state, x):
    """One LSTM cell update composed from engine primitives.

    Gates are ordered (input, forget, candidate, output). Returns
    ``(h_new, (h_new, c_new))``.
    """
    h, c = (ad.as_tensor(s) for s in state)
    x = ad.as_tensor(x)
    W, b = store[f"{layer_id}.W"], store[f"{layer_id}.b"]
    H = W.data.shape[1] // 4
    if h.data.shape[-1] != H or c.data.shape[-1] != H:
        raise DataError(f"{layer_id}: state size must be {H}")
    z = ad.matmul(ad.concat([x, h], axis=-1), W) + b
    i = ad.sigmoid(z[..., 0:H])
    f = ad.sigmoid(z[..., H:2 * H])
    g = ad.tanh(z[..., 2 * H:3 * H])
    o = ad.sigmoid(z[..., 3 * H:4 * H])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, (h_new, c_new)


def lstm_sequence(store: ParamStore, layer_id: str, seq, h0=None, c0=None):
    """Run the LSTM over a whole [T x n] sequence as one fused node.

    Returns ``(hidden_states, (h_T, c_T))``; the hidden-state tensor carries
    exact backpropagation-through-time gradients to the layer weights.
    """
    x = ad.as_tensor(seq)
    W, b = store[f"{layer_id}.W"], store[f"{layer_id}.b"]
    n = x.data.shape[1]
    H = W.data.shape[1] // 4
    if W.data.shape[0] != n + H:
        raise DataError(f"{layer_id}: input width {n} != {W.data.shape[0] - H}")
    h0 = np.zeros(H) if h0 is None else np.asarray(h0, dtype=float)
    c0 = np.zeros(H) if c0 is None else np.asarray(c0, dtype=float)
    W_x, W_h = W.data[:n], np.ascontiguousarray(W.data[n:])
    xw = np.ascontiguousarray(x.data @ W_x + b.data)
    hs, cs, gates = lstm_forward(xw, W_h, h0, c0)

    def back(g):
        d_z, d_w_h, _, _ = lstm_backward(np.ascontiguousarray(g), hs, cs, gates, W_h, h0, c0)
        gW = np.concatenate([x.data.T @ d_z, d_w_h], axis=0)
        return d_z @ W_x.T, gW, d_z.sum(axis=0)

    out = ad.op(hs, (x, W, b), back)
    return out, (hs[-1].copy(), cs[-1].copy())


def head_logits(store: ParamStore, features, layer_id: str = "head") -> Tensor:
    return dense_forward(store, layer_id, features, activation=False)


def regime_head(store: ParamStore, features, layer_id: str = "head") -> Tensor:
    """Affine map of the features followed by a max-shifted softmax."""
    return ad.softmax(head_logits(store, features, layer_id), axis=-1)
