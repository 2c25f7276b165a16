"""Experiment configuration: a flat JSON document plus two presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..tasks import FAMILIES


def _uniform_mix():
    return {f: 1.0 for f in FAMILIES}


@dataclass(frozen=True)
class ExperimentConfig:
    # network
    hidden_sizes: tuple = (40, 40)
    activation: str = "relu"
    # task distribution
    mix: dict = field(default_factory=_uniform_mix)
    x_range: tuple = (-5.0, 5.0)
    noise_sd: float = 0.0
    shots: int = 10
    train_query: int = 10
    q_query: int = 100
    # meta-learning
    inner_steps: int = 5
    inner_lr: float = 0.001
    outer_lr: float = 0.001
    batch_size: int = 32
    pretrain_epochs: int = 15000
    train_epochs: int = 5000
    order: str = "second"
    average_outer: bool = False
    momentum: float = 0.0
    # clustering / ensemble
    K: int = 4
    cluster_buffer: int = 2000
    kmeans_max_iter: int = 100
    err_on_adapted: bool = True
    # baseline: continue MAML from theta_clu for train_epochs on the expert stream
    baseline_continue: bool = True
    # evaluation
    eval_tasks: int = 4000
    seed: int = 0
    # not part of the config hash
    out_dir: str = "runs/default"
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        self.validate()

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key=key)

        need(all(h >= 1 for h in self.hidden_sizes), "hidden_sizes", "entries must be >= 1")
        need(self.activation in ("relu", "tanh"), "activation", "must be relu or tanh")
        need(isinstance(self.mix, dict) and set(self.mix) <= set(FAMILIES), "mix",
             f"keys must be among {FAMILIES}")
        need(all(float(v) >= 0 for v in self.mix.values()) and sum(self.mix.values()) > 0,
             "mix", "weights must be nonnegative with positive sum")
        need(len(self.x_range) == 2 and self.x_range[0] < self.x_range[1], "x_range",
             "must be [lo, hi] with lo < hi")
        need(self.noise_sd >= 0, "noise_sd", "must be >= 0")
        for key in ("shots", "train_query", "q_query", "batch_size", "K", "cluster_buffer",
                    "kmeans_max_iter", "eval_tasks"):
            need(int(getattr(self, key)) >= 1, key, "must be a positive integer")
        need(1 <= self.inner_steps <= 100, "inner_steps", "must lie in [1, 100]")
        for key in ("inner_lr", "outer_lr"):
            need(float(getattr(self, key)) > 0, key, "must be positive")
        for key in ("pretrain_epochs", "train_epochs", "seed", "log_every"):
            need(int(getattr(self, key)) >= 0, key, "must be a nonnegative integer")
        need(self.order in ("first", "second"), "order", "must be first or second")
        need(0.0 <= self.momentum < 1.0, "momentum", "must lie in [0, 1)")
        need(self.cluster_buffer >= self.K, "cluster_buffer", "must be >= K")

    @property
    def layer_sizes(self):
        return (1, *self.hidden_sizes, 1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["x_range"] = list(self.x_range)
        return d

    def hash(self) -> str:
        d = self.to_dict()
        for key in _UNHASHED:
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_UNHASHED = ("out_dir", "log_every")
FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}

PRESETS = {
    "paper": {
        "pretrain_epochs": 15000,
        "train_epochs": 5000,
        "eval_tasks": 4000,
    },
    "desk": {
        "pretrain_epochs": 2000,
        "train_epochs": 1000,
        "eval_tasks": 500,
    },
}


def _coerce(key, value):
    default = FIELDS[key].default
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if key == "mix":
            if not isinstance(value, dict):
                raise TypeError
            return {str(k): float(v) for k, v in value.items()}
        return tuple(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: bad value {value!r}", key=key) from None


def resolve(preset: str | None = None, file_values: dict | None = None, **overrides):
    """Defaults, then preset, then file values, then explicit overrides."""
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}", key="preset")
        values.update(PRESETS[preset])
    for source in (file_values or {}, {k: v for k, v in overrides.items() if v is not None}):
        for key, value in source.items():
            if key not in FIELDS:
                raise ConfigError(f"{key}: unknown configuration key", key=key)
            values[key] = value
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}", key="config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}", key="config") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object", key="config")
    return data
