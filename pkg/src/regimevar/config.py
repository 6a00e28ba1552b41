"""Flat ``key = value`` run configuration with per-key command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from .backtest import BacktestConfig
from .errors import ConfigError

SECTION = "backtest"
MODEL_PREFIX = "model "

_CASTS = {
    "window_days": int, "horizon_days": int, "paths": int, "seed": int, "refit_stride": int,
    "regimes": int, "hmm_restarts": int, "epochs": int, "attempts": int, "lookahead": int,
    "learning_rate": float, "weight_decay": float, "calendar": str, "cost_mode": str,
}
_ALIASES = {"window": "window_days", "horizon": "horizon_days", "k": "regimes"}


def _split(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _cast(key: str, value) -> object:
    key = _ALIASES.get(key, key)
    try:
        if key == "levels":
            return tuple(float(v) for v in _split(value))
        if key == "models":
            return tuple(_split(value))
        if key not in _CASTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        return _CASTS[key](value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key!r}") from None


def read_config_file(path) -> dict[str, object]:
    """Values of the ``[backtest]`` section plus ``[model <id>]`` training overrides.

    A file without section headers is read as the ``[backtest]`` section.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if not text.lstrip().startswith("["):
            text = f"[{SECTION}]\n" + text
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = [s for s in parser.sections() if s != SECTION and not s.startswith(MODEL_PREFIX)]
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {unknown}")
    values: dict[str, object] = {}
    if parser.has_section(SECTION):
        values = {_ALIASES.get(k, k): _cast(k, v) for k, v in parser.items(SECTION)}
    per_model = {}
    for sec in parser.sections():
        if sec.startswith(MODEL_PREFIX):
            per_model[sec[len(MODEL_PREFIX):].strip()] = {
                _ALIASES.get(k, k): _cast(k, v) for k, v in parser.items(sec)}
    if per_model:
        values["model_overrides"] = per_model
    return values


def parse_overrides(pairs) -> dict[str, object]:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"override {p!r} is not of the form key=value")
        k, v = p.split("=", 1)
        k = k.strip().replace("-", "_")
        out[_ALIASES.get(k, k)] = _cast(k, v.strip())
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> BacktestConfig:
    """Defaults < config file < command-line overrides."""
    values = {**(file_values or {}), **(overrides or {})}
    known = {f.name for f in fields(BacktestConfig)}
    bad = sorted(set(values) - known)
    if bad:
        raise ConfigError(f"unknown configuration key(s) {bad}")
    return BacktestConfig(**values)


def render_config(cfg: BacktestConfig) -> str:
    lines = [f"[{SECTION}]"]
    d = cfg.to_dict()
    per_model = d.pop("model_overrides")
    for k, v in d.items():
        if isinstance(v, list):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{k} = {v}")
    for model_id, kv in per_model.items():
        lines.append(f"\n[{MODEL_PREFIX}{model_id}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
    return "\n".join(lines) + "\n"
