"""Named parameter storage, optimizer state and the GMM head parametrisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .autodiff import Tensor

SNAPSHOT_VERSION = 1


@dataclass
class ParamStore:
    """Parameters by name, their gradients (on each Tensor) and AdaMax state."""

    params: dict[str, Tensor] = field(default_factory=dict)
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    inf_norm: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    no_decay: set[str] = field(default_factory=set)

    def add(self, name: str, value, decay: bool = True) -> Tensor:
        if name in self.params:
            raise DataError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=float), requires_grad=True, name=name)
        self.params[name] = t
        if not decay:
            self.no_decay.add(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def value(self, name: str) -> np.ndarray:
        return self.params[name].data

    def set(self, name: str, value) -> None:
        value = np.array(value, dtype=float)
        if value.shape != self.params[name].data.shape:
            raise DataError(f"shape mismatch for {name!r}: {value.shape} vs {self.params[name].data.shape}")
        self.params[name].data = value

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def reset_optimizer(self) -> None:
        self.first_moment.clear()
        self.inf_norm.clear()
        self.step = 0

    def count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.set(k, v)

    def copy(self) -> "ParamStore":
        out = ParamStore(no_decay=set(self.no_decay))
        for k, t in self.params.items():
            out.add(k, t.data.copy(), decay=k not in self.no_decay)
        return out

    def to_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "tensors": {k: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
                        for k, t in self.params.items()},
            "no_decay": sorted(self.no_decay),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamStore":
        if d.get("version") != SNAPSHOT_VERSION:
            raise DataError(f"unsupported parameter snapshot version {d.get('version')!r}")
        store = cls()
        no_decay = set(d.get("no_decay", []))
        for k, spec in d["tensors"].items():
            store.add(k, np.asarray(spec["data"], dtype=float).reshape(spec["shape"]),
                      decay=k not in no_decay)
        return store


def factor_from_raw(raw: np.ndarray) -> np.ndarray:
    """Lower-triangular factor(s) from unconstrained storage.

    Strictly-lower entries are used as-is, the diagonal is stored as a log and
    the upper triangle is ignored, so every real ``raw`` yields a factor with
    positive diagonal.
    """
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[-1]
    L = np.tril(raw, -1)
    idx = np.arange(n)
    L[..., idx, idx] = np.exp(raw[..., idx, idx])
    return L


def raw_from_factor(L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    idx = np.arange(n)
    diag = L[..., idx, idx]
    if np.any(diag <= 0):
        raise DataError("factor diagonal must be positive")
    raw = np.tril(L, -1)
    raw[..., idx, idx] = np.log(diag)
    return raw


@dataclass
class GmmHeadParams:
    """Per-regime means and log-diagonal Cholesky storage, as views into a store."""

    store: ParamStore
    mean_name: str = "gmm.mean"
    raw_name: str = "gmm.chol"

    @property
    def means(self) -> np.ndarray:
        return self.store.value(self.mean_name)

    @property
    def factors(self) -> np.ndarray:
        return factor_from_raw(self.store.value(self.raw_name))

    @property
    def k(self) -> int:
        return self.means.shape[0]

    def covariances(self) -> np.ndarray:
        L = self.factors
        return L @ np.swapaxes(L, -1, -2)

    def assign(self, means, factors) -> None:
        self.store.set(self.mean_name, np.asarray(means, dtype=float))
        self.store.set(self.raw_name, raw_from_factor(np.asarray(factors, dtype=float)))
