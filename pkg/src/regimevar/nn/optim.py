"""AdaMax with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .params import ParamStore


def adamax_step(store: ParamStore, learning_rate: float, weight_decay: float = 0.0,
                beta1: float = 0.9, beta2: float = 0.999) -> None:
    """One AdaMax update over every parameter that has a gradient.

    m <- b1 m + (1 - b1) g,  u <- max(b2 u, |g|),
    theta <- theta (1 - lr wd) - lr / (1 - b1^t) * m / u.
    Parameters listed in ``store.no_decay`` are not shrunk. A non-finite
    gradient raises before anything is modified.
    """
    for name, t in store.params.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericalError(f"non-finite gradient for {name!r}")
    store.step += 1
    step_size = learning_rate / (1.0 - beta1 ** store.step)
    for name, t in store.params.items():
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        m = store.first_moment.get(name)
        u = store.inf_norm.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        u = np.abs(g) if u is None else np.maximum(beta2 * u, np.abs(g))
        store.first_moment[name] = m
        store.inf_norm[name] = u
        data = t.data
        if weight_decay and name not in store.no_decay:
            data = data * (1.0 - learning_rate * weight_decay)
        # u == 0 implies every gradient so far was zero, hence m == 0 as well.
        update = np.divide(m, u, out=np.zeros_like(m), where=u > 0)
        t.data = data - step_size * update
