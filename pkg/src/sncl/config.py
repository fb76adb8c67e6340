"""Experiment configuration files.

Grammar, one entry per line::

    # comment
    key = value
    key = value1, value2, ...     # list
    sweep.key = v1, v2, ...       # grid axis for ``sncl sweep``

Values parse as int, float, true/false or bare strings, in that order.
Unknown keys are rejected.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .trainer import METHODS, MethodConfig

PROTOCOLS = ("pmnist", "rmnist", "split_mnist", "mnist360", "blobs")
SWEEP_KEYS = ("alpha", "beta", "gamma", "eta", "lr")


@dataclass
class ExperimentConfig:
    protocol: str = "pmnist"
    methods: list = field(default_factory=lambda: ["sncl"])
    buffer: int = 200
    seeds: list = field(default_factory=lambda: [0])
    scale: str = "reduced"
    out: str = "runs/default"
    setting: str | None = None  # task_il/class_il override for split protocols
    tasks: int | None = None
    train_per_task: int | None = None
    test_per_task: int | None = None
    per_pair: int = 500
    hidden: int = 100
    epochs: int = 1
    lr: float | None = None
    batch_size: int | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    eta: float | None = None
    lrs_admission: str | None = None
    lrs_ratio: float | None = None
    refresh_losses: bool | None = None
    gate_noise: str | None = None
    lambda_lr_scale: float | None = None
    prune_threshold: float | None = None
    eval_every: int | None = None
    workers: int = 1
    save_checkpoints: bool = False
    dump_buffer: bool = False
    sweep_seeds: list | None = None
    sweep: dict = field(default_factory=dict)

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if not self.methods:
            raise ConfigError("no methods given")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        if self.buffer <= 0:
            raise ConfigError("buffer must be positive")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list without repeats")
        if self.scale not in ("reduced", "full"):
            raise ConfigError("scale must be reduced or full")
        if self.setting not in (None, "class_il", "task_il", "domain_il"):
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for key, values in self.sweep.items():
            if key not in SWEEP_KEYS:
                raise ConfigError(f"cannot sweep {key!r}; sweepable keys are {SWEEP_KEYS}")
            if not values:
                raise ConfigError(f"sweep axis {key!r} is empty")
        for m in self.methods:
            self.method_config(m)
        return self

    def method_config(self, method, **extra):
        overrides = {}
        for f in ("lr", "batch_size", "alpha", "beta", "gamma", "eta", "lrs_admission", "lrs_ratio",
                  "refresh_losses", "gate_noise", "lambda_lr_scale", "prune_threshold", "eval_every"):
            v = getattr(self, f)
            if v is not None:
                overrides[f] = v
        # weights a baseline cannot carry are dropped rather than rejected
        if method in ("sgd",):
            for k in ("alpha", "beta", "gamma", "eta"):
                overrides.pop(k, None)
        if method in ("er",):
            for k in ("beta", "gamma", "eta"):
                overrides.pop(k, None)
        if method in ("der",):
            for k in ("gamma", "eta"):
                overrides.pop(k, None)
        overrides.update(extra)
        overrides["epochs"] = self.epochs
        return MethodConfig.preset(method, **overrides)

    def grid(self):
        """Every cell of the sweep grid as a dict of overrides."""
        if not self.sweep:
            raise ConfigError("sweep needs at least one sweep.<key> axis")
        keys = sorted(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None}).validate()


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


_LIST_KEYS = {"methods", "seeds", "sweep_seeds"}
_ALIASES = {"method": "methods", "seed": "seeds"}


def parse_config_text(text, source="<config>"):
    known = {f.name for f in fields(ExperimentConfig)}
    values, sweep = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        items = [parse_value(v) for v in value.split(",")] if "," in value else [parse_value(value)]
        if key.startswith("sweep."):
            sweep[key[len("sweep."):]] = [v for v in items if v is not None]
            continue
        key = _ALIASES.get(key, key)
        if key not in known or key == "sweep":
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = items if key in _LIST_KEYS else (items[0] if len(items) == 1 else items)
    if "methods" in values:
        values["methods"] = [str(m).lower() for m in values["methods"]]
    cfg = ExperimentConfig(**values, sweep=sweep)
    return cfg.validate()


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(path.read_text(), str(path))
