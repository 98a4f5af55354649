"""Run configuration: defaults, JSON loading, validation.

Unknown keys are rejected. JSON uses ``lambda`` where Python uses ``lam``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model import LossWeights, ModelConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    T: int = 128
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    r: int = 16
    w: int = 32
    stride: int = 16
    theta: float = 0.9
    kappa: float | None = None
    eps: float = 1e-6
    band_mode: str = "per_batch"
    injection: str = "causal"
    weighted_edges: bool = False
    # loss weights
    lam: float = 0.1
    mu: float = 0.01
    eta: float = 0.05
    # training
    corpus: str | None = None
    corpus_bytes: int = 262144
    corpus_seed: int = 0
    out: str = "runs"
    steps: int = 200
    batch_size: int = 8
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    lr: float = 3e-4
    weight_decay: float = 0.01
    eval_fraction: float = 0.1
    eval_windows: int = 16
    smooth: int = 50
    # metrics
    tau: float = 0.9
    # analyze
    analyze_kappa: float = 0.05
    input: str | None = None
    # harmonize
    checkpoint: str | None = None
    prompt: str = "The "
    max_new: int = 32

    def model_config(self, seed=None):
        try:
            return ModelConfig(
                T=self.T, d=self.d, n_layers=self.n_layers, n_heads=self.n_heads,
                ffn_mult=self.ffn_mult, r=self.r, w=self.w, stride=self.stride,
                theta=self.theta, kappa=self.kappa, eps=self.eps, band_mode=self.band_mode,
                injection=self.injection, weighted_edges=self.weighted_edges,
                seed=self.seed if seed is None else seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def loss_weights(self):
        try:
            return LossWeights(self.lam, self.mu, self.eta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_json_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return dict(sorted(d.items()))


_JSON_TO_FIELD = {"lambda": "lam"}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name, value):
    default = getattr(RunConfig(), name)
    if name in ("kappa", "corpus", "input", "checkpoint"):
        if value is None:
            return None
        return float(value) if name == "kappa" else str(value)
    if name == "seeds":
        if not isinstance(value, list) or not value or not all(isinstance(v, int) for v in value):
            raise ConfigError("seeds must be a nonempty list of integers")
        return list(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def from_dict(d, base=None):
    base = base or RunConfig()
    updates = {}
    for key, value in d.items():
        name = _JSON_TO_FIELD.get(key, key)
        if name not in _FIELD_TYPES or key == "lam":
            raise ConfigError(f"unknown config key {key!r}")
        updates[name] = _coerce(name, value)
    cfg = replace(base, **updates)
    validate(cfg)
    return cfg


def load(path=None, overrides=None):
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(d)


def validate(cfg):
    cfg.model_config()
    cfg.loss_weights()
    if cfg.steps < 0:
        raise ConfigError("steps must be nonnegative")
    if cfg.batch_size < 1 or cfg.eval_windows < 1:
        raise ConfigError("batch_size and eval_windows must be positive")
    if not 0 < cfg.tau <= 1:
        raise ConfigError("tau must lie in (0, 1]")
    if not 0 < cfg.eval_fraction < 1:
        raise ConfigError("eval_fraction must lie in (0, 1)")
    if cfg.smooth < 1:
        raise ConfigError("smooth must be positive")
    if cfg.analyze_kappa <= 0:
        raise ConfigError("analyze_kappa must be positive")
    if cfg.max_new < 0:
        raise ConfigError("max_new must be nonnegative")


def default_json():
    return json.dumps(RunConfig().to_json_dict(), indent=2) + "\n"
