"""Neural regime-switching model: temporal backbone -> softmax regime head -> Gaussian mixture.

A backbone (feed-forward, dilated causal convolution or LSTM) maps the
trailing history to regime probabilities phi(t). Each regime owns an
unconditioned Gaussian (mu_i, Sigma_i). The model is trained on a
normalised window by minimising the lookahead mixture likelihood, optionally
multiplied by a balance penalty, and simulated by feeding its own draws back
into the receptive field.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, InsufficientDataError, NumericalError, TrainingFailedError
from .gaussian import MvGaussian, categorical
from .hmm import HmmParams, baum_welch
from .nn import autodiff as ad
from .nn.layers import (KERNEL, causal_dilated_conv_forward, dense_forward, head_logits,
                        init_conv, init_dense, init_lstm, lstm_sequence)
from .nn.losses import balance_regularizer, regularized_loss, sequence_loss
from .nn.optim import adamax_step
from .nn.params import GmmHeadParams, ParamStore, raw_from_factor

logger = logging.getLogger(__name__)

KINDS = ("ffn", "tcn", "lstm")


@dataclass(frozen=True)
class BackboneSpec:
    kind: str
    hidden: tuple[int, ...] = (32, 16, 8)
    ffn_field: int = 10
    tcn_layers: int = 7
    tcn_channels: int = 3
    lstm_hidden: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown backbone {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind == "ffn" and (self.ffn_field < 1 or not self.hidden):
            raise ConfigError("feed-forward backbone needs r >= 1 and at least one hidden layer")
        if self.kind == "tcn" and (self.tcn_layers < 1 or self.tcn_channels < 1):
            raise ConfigError("convolutional backbone needs at least one layer and channel")
        if self.kind == "lstm" and self.lstm_hidden < 1:
            raise ConfigError("LSTM hidden size must be positive")

    @classmethod
    def ffn(cls, **kw) -> "BackboneSpec":
        return cls("ffn", **kw)

    @classmethod
    def tcn(cls, **kw) -> "BackboneSpec":
        return cls("tcn", **kw)

    @classmethod
    def lstm(cls, **kw) -> "BackboneSpec":
        return cls("lstm", **kw)

    @property
    def dilations(self) -> list[int]:
        return [2 ** i for i in range(self.tcn_layers)]

    @property
    def receptive_field(self) -> int | None:
        """Trailing days phi(t) depends on; None means the whole history (LSTM)."""
        if self.kind == "ffn":
            return self.ffn_field
        if self.kind == "tcn":
            return 1 + (KERNEL - 1) * (2 ** self.tcn_layers - 1)
        return None

    @property
    def min_history(self) -> int:
        return self.receptive_field or 1

    @property
    def feature_width(self) -> int:
        return {"ffn": self.hidden[-1] if self.hidden else 0, "tcn": self.tcn_channels,
                "lstm": self.lstm_hidden}[self.kind]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(**{**d, "hidden": tuple(d.get("hidden", (32, 16, 8)))})


@dataclass
class TrainConfig:
    window_days: int = 2000
    attempts: int = 5
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    reg_weight: float = 0.0
    init: str = "random"
    seed: int = 0
    k: int = 2
    lookahead: int = 5

    def validate(self, spec: BackboneSpec) -> None:
        if self.attempts < 1:
            raise ConfigError("attempts must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.init not in ("random", "hmm"):
            raise ConfigError(f"init must be 'random' or 'hmm', got {self.init!r}")
        if self.k < 1 or self.lookahead < 1:
            raise ConfigError("k and lookahead must be positive")
        if self.reg_weight < 0:
            raise ConfigError("regulariser weight must be non-negative")
        if self.window_days <= spec.min_history + self.lookahead:
            raise ConfigError(
                f"window of {self.window_days} days is too short for receptive field "
                f"{spec.min_history} plus lookahead {self.lookahead}")


@dataclass
class TrainReport:
    losses: list[list[float]] = field(default_factory=list)
    final_losses: list[float] = field(default_factory=list)
    failures: list[str | None] = field(default_factory=list)
    selected: int = -1
    regime_shares: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"final_losses": [None if not np.isfinite(x) else x for x in self.final_losses],
                "failures": self.failures, "selected": self.selected,
                "regime_shares": self.regime_shares,
                "losses": self.losses}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(losses=d.get("losses", []),
                   final_losses=[np.inf if x is None else x for x in d.get("final_losses", [])],
                   failures=d.get("failures", []), selected=d.get("selected", -1),
                   regime_shares=d.get("regime_shares", []))


@dataclass
class RegimeNetModel:
    spec: BackboneSpec
    params: ParamStore
    k: int
    n_assets: int
    lookahead: int
    norm_mean: np.ndarray
    norm_var: np.ndarray
    report: TrainReport | None = None

    def __post_init__(self):
        self.norm_mean = np.asarray(self.norm_mean, dtype=float).reshape(-1)
        self.norm_var = np.asarray(self.norm_var, dtype=float).reshape(-1)
        if self.norm_mean.shape != (self.n_assets,) or self.norm_var.shape != (self.n_assets,):
            raise DataError("normalisation constants must have one entry per asset")
        if np.any(self.norm_var <= 0):
            raise DataError("normalisation variance must be positive")

    @property
    def gmm(self) -> GmmHeadParams:
        return GmmHeadParams(self.params)

    def parameter_count(self) -> int:
        """Free parameters; the unused upper triangle of each factor is not counted."""
        n = self.n_assets
        unused = self.k * n * (n - 1) // 2
        return self.params.count() - unused

    def regimes(self) -> tuple[MvGaussian, ...]:
        """Regime Gaussians on the raw return scale."""
        v, m = self.norm_var, self.norm_mean
        return tuple(MvGaussian(mu * v + m, v[:, None] * L)
                     for mu, L in zip(self.gmm.means, self.gmm.factors))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(), "k": self.k, "n_assets": self.n_assets,
            "lookahead": self.lookahead, "norm_mean": self.norm_mean.tolist(),
            "norm_var": self.norm_var.tolist(), "params": self.params.to_dict(),
            "report": None if self.report is None else self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeNetModel":
        rep = d.get("report")
        return cls(BackboneSpec.from_dict(d["spec"]), ParamStore.from_dict(d["params"]),
                   int(d["k"]), int(d["n_assets"]), int(d["lookahead"]),
                   np.asarray(d["norm_mean"]), np.asarray(d["norm_var"]),
                   None if rep is None else TrainReport.from_dict(rep))


# ---------------------------------------------------------------- normalisation

def _matrix(data) -> np.ndarray:
    X = np.asarray(getattr(data, "returns", data), dtype=float)
    return X[:, None] if X.ndim == 1 else X


def normalize_inputs(window) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """(X - mean) / var per asset, using the unbiased variance (not the std)."""
    X = _matrix(window)
    if X.shape[0] < 2:
        raise InsufficientDataError("normalisation needs at least two observations")
    mean = X.mean(axis=0)
    var = X.var(axis=0, ddof=1)
    if np.any(var <= 0):
        raise DataError("an asset has zero variance in the training window")
    return (X - mean) / var, (mean, var)


def _apply_norm(model: RegimeNetModel, X: np.ndarray) -> np.ndarray:
    if X.shape[1] != model.n_assets:
        raise DataError(f"history has {X.shape[1]} assets, model expects {model.n_assets}")
    return (X - model.norm_mean) / model.norm_var


# ---------------------------------------------------------------- construction

def _layer_names(spec: BackboneSpec) -> list[str]:
    if spec.kind == "ffn":
        return [f"ffn{i}" for i in range(len(spec.hidden))]
    if spec.kind == "tcn":
        return [f"tcn{i}" for i in range(spec.tcn_layers)]
    return ["lstm"]


def _init_backbone(store: ParamStore, spec: BackboneSpec, n: int, k: int,
                   rng: np.random.Generator) -> None:
    if spec.kind == "ffn":
        width = spec.ffn_field * n
        for name, h in zip(_layer_names(spec), spec.hidden):
            init_dense(store, name, width, h, rng)
            width = h
    elif spec.kind == "tcn":
        c = n
        for name in _layer_names(spec):
            init_conv(store, name, c, spec.tcn_channels, rng)
            c = spec.tcn_channels
    else:
        init_lstm(store, "lstm", n, spec.lstm_hidden, rng)
    init_dense(store, "head", spec.feature_width, k, rng)


def _new_store(spec: BackboneSpec, n: int, k: int, rng: np.random.Generator,
               means: np.ndarray | None, raw: np.ndarray | None) -> ParamStore:
    store = ParamStore()
    _init_backbone(store, spec, n, k, rng)
    if means is None:
        means = rng.standard_normal((k, n))
        raw = np.tril(rng.standard_normal((k, n, n)))
    store.add("gmm.mean", means, decay=False)
    store.add("gmm.chol", raw, decay=False)
    return store


def build_model(spec: BackboneSpec, n_assets: int, k: int, rng: np.random.Generator,
                norm=None, lookahead: int = 5) -> RegimeNetModel:
    """Randomly initialised model: backbone from U(-1/sqrt(i), 1/sqrt(i)), GMM head N(0, 1)."""
    mean, var = norm if norm is not None else (np.zeros(n_assets), np.ones(n_assets))
    store = _new_store(spec, n_assets, k, rng, None, None)
    return RegimeNetModel(spec, store, k, n_assets, lookahead, mean, var)


def hmm_initialize(model: RegimeNetModel, hmm: HmmParams, rng: np.random.Generator) -> RegimeNetModel:
    """Seed the GMM head from fitted HMM regimes, rescaled to the model's input scale.

    The backbone and head weights are redrawn from U(-1/sqrt(i), 1/sqrt(i)).
    """
    if hmm.k != model.k or hmm.dim != model.n_assets:
        raise DataError(f"HMM has k={hmm.k}, n={hmm.dim}; model has k={model.k}, n={model.n_assets}")
    means, raw = _hmm_head(hmm, model.norm_mean, model.norm_var)
    store = _new_store(model.spec, model.n_assets, model.k, rng, means, raw)
    return RegimeNetModel(model.spec, store, model.k, model.n_assets, model.lookahead,
                          model.norm_mean, model.norm_var)


def _hmm_head(hmm: HmmParams, mean: np.ndarray, var: np.ndarray):
    means = np.stack([(g.mean - mean) / var for g in hmm.regimes])
    factors = np.stack([g.cov_factor / var[:, None] for g in hmm.regimes])
    return means, raw_from_factor(factors)


# ---------------------------------------------------------------- forward passes

def _train_rows(spec: BackboneSpec, T: int) -> np.ndarray:
    start = (spec.receptive_field or 1) - 1
    return np.arange(start, T - 1)


def _features(store: ParamStore, spec: BackboneSpec, Xn: np.ndarray, rows: np.ndarray):
    """Backbone features at each day in ``rows`` (autodiff graph)."""
    if spec.kind == "ffn":
        r, n = spec.ffn_field, Xn.shape[1]
        windows = sliding_window_view(Xn, (r, n))[:, 0].reshape(-1, r * n)
        h = ad.Tensor(windows[rows - r + 1])
        for name in _layer_names(spec):
            h = dense_forward(store, name, h)
        return h
    if spec.kind == "tcn":
        h = ad.Tensor(Xn)
        for name, d in zip(_layer_names(spec), spec.dilations):
            h = ad.tanh(causal_dilated_conv_forward(store, name, h, d))
        return ad.take(h, rows)
    hs, _ = lstm_sequence(store, "lstm", Xn)
    return ad.take(hs, rows)


def _objective(store: ParamStore, spec: BackboneSpec, Xn: np.ndarray, rows: np.ndarray,
               lookahead: int, reg_weight: float):
    log_phi = ad.log_softmax(head_logits(store, _features(store, spec, Xn, rows)), axis=-1)
    base = sequence_loss(log_phi, store["gmm.mean"], store["gmm.chol"], Xn, rows, lookahead)
    if reg_weight == 0:
        return base, log_phi
    return regularized_loss(base, balance_regularizer(ad.exp(log_phi)), reg_weight), log_phi


def regime_path(model: RegimeNetModel, history) -> np.ndarray:
    """phi(t) for every day t of ``history`` with a full receptive field -> [T' x k]."""
    X = _matrix(history)
    if X.shape[0] < model.spec.min_history:
        raise InsufficientDataError(
            f"history of {X.shape[0]} days is shorter than the receptive field {model.spec.min_history}")
    Xn = _apply_norm(model, X)
    rows = np.arange(model.spec.min_history - 1, X.shape[0])
    logits = head_logits(model.params, _features(model.params, model.spec, Xn, rows)).data
    return _softmax(logits)


def regime_probs(model: RegimeNetModel, history) -> np.ndarray:
    """phi at the last day of ``history``."""
    X = _matrix(history)
    r = model.spec.receptive_field
    if r is not None:
        X = X[-r:] if X.shape[0] >= r else X
    return regime_path(model, X)[-1]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------- training

def _bull_first(model: RegimeNetModel) -> None:
    order = np.argsort(-model.gmm.means[:, 0], kind="stable")
    if np.array_equal(order, np.arange(model.k)):
        return
    s = model.params
    s.set("head.W", s.value("head.W")[:, order])
    s.set("head.b", s.value("head.b")[order])
    s.set("gmm.mean", s.value("gmm.mean")[order])
    s.set("gmm.chol", s.value("gmm.chol")[order])


def _fit_attempt(store: ParamStore, spec: BackboneSpec, Xn: np.ndarray, rows: np.ndarray,
                 cfg: TrainConfig) -> tuple[list[float], float]:
    curve = []
    for _ in range(cfg.epochs):
        store.zero_grad()
        loss, _ = _objective(store, spec, Xn, rows, cfg.lookahead, cfg.reg_weight)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError("non-finite training loss")
        curve.append(value)
        loss.backward()
        adamax_step(store, cfg.learning_rate, cfg.weight_decay)
    final = float(_objective(store, spec, Xn, rows, cfg.lookahead, cfg.reg_weight)[0].data)
    if not np.isfinite(final):
        raise NumericalError("non-finite training loss")
    return curve, final


def train(window, spec: BackboneSpec, config: TrainConfig,
          hmm: HmmParams | None = None) -> RegimeNetModel:
    """Best-of-N training on the trailing ``config.window_days`` of ``window``.

    Each attempt redraws the backbone from its own seed; with HMM
    initialisation every attempt starts from the same HMM-seeded GMM head.
    The attempt with the lowest final objective wins (lowest index on ties).
    """
    config.validate(spec)
    X = _matrix(window)
    if X.shape[0] < config.window_days:
        raise InsufficientDataError(f"need {config.window_days} days, got {X.shape[0]}")
    X = X[-config.window_days:]
    n = X.shape[1]
    Xn, (mean, var) = normalize_inputs(X)
    rows = _train_rows(spec, Xn.shape[0])

    head = (None, None)
    if config.init == "hmm":
        if hmm is None:
            hmm = baum_welch(X, config.k, np.random.default_rng([config.seed, 0xB0]))
        if hmm.k != config.k or hmm.dim != n:
            raise DataError(f"HMM has k={hmm.k}, n={hmm.dim}; expected k={config.k}, n={n}")
        head = _hmm_head(hmm, mean, var)

    report = TrainReport()
    best: ParamStore | None = None
    best_loss = np.inf
    for attempt in range(config.attempts):
        rng = np.random.default_rng([config.seed, attempt])
        store = _new_store(spec, n, config.k, rng,
                           None if head[0] is None else head[0].copy(),
                           None if head[1] is None else head[1].copy())
        try:
            curve, final = _fit_attempt(store, spec, Xn, rows, config)
        except NumericalError as exc:
            logger.info("training attempt %d aborted: %s", attempt, exc)
            report.losses.append([])
            report.final_losses.append(np.inf)
            report.failures.append(str(exc))
            continue
        report.losses.append(curve)
        report.final_losses.append(final)
        report.failures.append(None)
        if final < best_loss:
            best, best_loss = store, final
            report.selected = attempt
    if best is None:
        raise TrainingFailedError(f"all {config.attempts} training attempts failed")
    best.reset_optimizer()
    model = RegimeNetModel(spec, best, config.k, n, config.lookahead, mean, var, report)
    _bull_first(model)
    report.regime_shares = regime_path(model, X).mean(axis=0).tolist()
    return model


# ---------------------------------------------------------------- simulation

class _Stepper:
    """Batched per-path evaluation of phi for the next day, with feedback."""

    def __init__(self, model: RegimeNetModel, Xn: np.ndarray, paths: int, horizon: int):
        self.model, self.spec, self.s = model, model.spec, model.params
        self.paths = paths
        kind = self.spec.kind
        if kind == "ffn":
            r = self.spec.ffn_field
            self.buf = np.broadcast_to(Xn[-r:], (paths, r, Xn.shape[1])).copy()
        elif kind == "tcn":
            self.T0 = Xn.shape[0]
            shared = [Xn]
            h = ad.Tensor(Xn)
            for name, d in zip(_layer_names(self.spec), self.spec.dilations):
                h = ad.Tensor(np.tanh(causal_dilated_conv_forward(self.s, name, h, d).data))
                shared.append(h.data)
            self.shared = shared
            widths = [Xn.shape[1]] + [self.spec.tcn_channels] * self.spec.tcn_layers
            self.new = [np.zeros((paths, max(horizon, 1), w)) for w in widths]
            self.step_idx = 0
            self.current = np.broadcast_to(shared[-1][-1], (paths, widths[-1]))
        else:
            _, (h, c) = lstm_sequence(self.s, "lstm", Xn)
            H = self.spec.lstm_hidden
            self.h = np.broadcast_to(h, (paths, H)).copy()
            self.c = np.broadcast_to(c, (paths, H)).copy()

    def features(self) -> np.ndarray:
        kind = self.spec.kind
        if kind == "ffn":
            h = self.buf.reshape(self.paths, -1)
            for name in _layer_names(self.spec):
                h = np.tanh(h @ self.s.value(f"{name}.W") + self.s.value(f"{name}.b"))
            return h
        if kind == "tcn":
            return self.current
        return self.h

    def phi(self) -> np.ndarray:
        z = self.features() @ self.s.value("head.W") + self.s.value("head.b")
        return _softmax(z)

    def _tap(self, layer: int, idx: int) -> np.ndarray:
        if idx >= self.T0:
            return self.new[layer][:, idx - self.T0]
        return self.shared[layer][idx]

    def push(self, x: np.ndarray) -> None:
        kind = self.spec.kind
        if kind == "ffn":
            self.buf[:, :-1] = self.buf[:, 1:]
            self.buf[:, -1] = x
        elif kind == "tcn":
            s = self.step_idx
            t = self.T0 + s
            self.new[0][:, s] = x
            for layer, (name, d) in enumerate(zip(_layer_names(self.spec), self.spec.dilations)):
                W, b = self.s.value(f"{name}.W"), self.s.value(f"{name}.b")
                acc = np.broadcast_to(b, (self.paths, b.shape[0])).copy()
                for k in range(W.shape[0]):
                    idx = t - (W.shape[0] - 1 - k) * d
                    if idx >= 0:
                        acc += self._tap(layer, idx) @ W[k]
                self.new[layer + 1][:, s] = np.tanh(acc)
            self.current = self.new[-1][:, s]
            self.step_idx += 1
        else:
            W, b = self.s.value("lstm.W"), self.s.value("lstm.b")
            H = self.spec.lstm_hidden
            z = np.concatenate([x, self.h], axis=1) @ W + b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            self.c = f * self.c + i * g
            self.h = o * np.tanh(self.c)


def simulate(model: RegimeNetModel, history, horizon: int, rng: np.random.Generator,
             n_paths: int | None = None) -> np.ndarray:
    """Monte-Carlo paths on the raw return scale: [horizon x n] or [paths x horizon x n].

    Each day: phi from the current receptive field, a regime drawn from phi,
    a return drawn from that regime's Gaussian, which is then appended to the
    history of that path.
    """
    X = _matrix(history)
    if X.shape[0] < model.spec.min_history:
        raise InsufficientDataError(
            f"history of {X.shape[0]} days is shorter than the receptive field {model.spec.min_history}")
    if horizon < 0:
        raise DataError("horizon must be non-negative")
    paths = 1 if n_paths is None else int(n_paths)
    n = model.n_assets
    out = np.empty((paths, horizon, n))
    if horizon > 0:
        Xn = _apply_norm(model, X)
        stepper = _Stepper(model, Xn, paths, horizon)
        means, factors = model.gmm.means, model.gmm.factors
        for day in range(horizon):
            state = categorical(stepper.phi(), rng)
            z = rng.standard_normal((paths, n))
            xn = means[state] + np.einsum("pij,pj->pi", factors[state], z)
            out[:, day] = xn * model.norm_var + model.norm_mean
            if day + 1 < horizon:
                stepper.push(xn)
    return out[0] if n_paths is None else out
