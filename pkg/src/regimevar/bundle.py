"""JSON persistence of fitted models (classic Gaussian, HMM or neural regime model)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError
from .gaussian import MvGaussian, sample
from .hmm import HmmParams, forward_backward, simulate_hmm
from .regimenet import RegimeNetModel, simulate

BUNDLE_FORMAT = "regimevar-model"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    model_id: str
    asset_names: tuple[str, ...]
    model: MvGaussian | HmmParams | RegimeNetModel

    @property
    def kind(self) -> str:
        if isinstance(self.model, MvGaussian):
            return "classic"
        if isinstance(self.model, HmmParams):
            return "hmm"
        return "net"

    def to_dict(self) -> dict:
        return {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "package_version": __version__,
                "kind": self.kind, "model_id": self.model_id,
                "asset_names": list(self.asset_names), "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != BUNDLE_FORMAT:
            raise DataError("not a model bundle")
        if d.get("version") != BUNDLE_VERSION:
            raise DataError(f"bundle version {d.get('version')!r} is not supported "
                            f"(expected {BUNDLE_VERSION})")
        loaders = {"classic": MvGaussian.from_dict, "hmm": HmmParams.from_dict,
                   "net": RegimeNetModel.from_dict}
        if d.get("kind") not in loaders:
            raise DataError(f"unknown model kind {d.get('kind')!r}")
        try:
            model = loaders[d["kind"]](d["model"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed model bundle: {exc}") from None
        return cls(d["model_id"], tuple(d["asset_names"]), model)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"{path}: no such bundle") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def simulate(self, history: np.ndarray, horizon: int, paths: int,
                 rng: np.random.Generator) -> np.ndarray:
        """[paths x horizon x n] daily return paths starting after ``history``."""
        if history.shape[1] != len(self.asset_names):
            raise DataError(f"history has {history.shape[1]} assets, bundle has {len(self.asset_names)}")
        if self.kind == "classic":
            return sample(self.model, rng, (paths, horizon))
        if self.kind == "hmm":
            start = forward_backward(self.model, history).probs[-1]
            return simulate_hmm(self.model, start / start.sum(), horizon, rng, paths)
        return simulate(self.model, history, horizon, rng, paths)
