"""Run configuration: JSON parsing, validation, defaults, and hashing.

A run is described by one flat JSON object. Every field has a default, so
an empty document is a valid full-default run. Unknown keys are rejected
by name rather than silently ignored, and a round-trip through
``to_dict`` / ``config_from_dict`` is exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError
from .histogram import HistogramSpec
from .losses import LossWeights


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    data_seed: int = 0
    out_dir: str | None = None
    lr: float = 1e-4
    steps: int = 2000
    batch: int = 8
    eval_every: int = 50
    sync_pretrain_steps: int = 1000
    bins: int = 11
    alpha_max: float = 3.0
    spacing: str = "linear"
    kernel_scale: float = 10.0
    kernel_bandwidth: float | None = None
    w_un: float = 1.0
    w_ad: float = 1.0
    w_pe: float = 10.0
    w_sync: float = 0.1
    enable_un1: bool = True
    enable_un2: bool = True
    enable_pe: bool = True
    enable_sync: bool = True
    enable_adversarial: bool = True
    enable_pred_error: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.steps < 1:
            raise ConfigError(f"steps must be at least 1, got {self.steps}")
        if self.batch < 1:
            raise ConfigError(f"batch must be at least 1, got {self.batch}")
        if self.eval_every < 1:
            raise ConfigError(
                f"eval_every must be at least 1, got {self.eval_every}")
        if self.sync_pretrain_steps < 1:
            raise ConfigError("sync_pretrain_steps must be at least 1, "
                              f"got {self.sync_pretrain_steps}")
        # constructing these validates the histogram and weight fields
        self.hist_spec()
        self.loss_weights()

    def hist_spec(self):
        return HistogramSpec(
            bin_count=self.bins, alpha_max=self.alpha_max,
            spacing=self.spacing, kernel_scale=self.kernel_scale,
            kernel_bandwidth=self.kernel_bandwidth)

    def loss_weights(self):
        return LossWeights(w_un=self.w_un, w_ad=self.w_ad,
                           w_pe=self.w_pe, w_sync=self.w_sync)

    def to_dict(self):
        return {f.name: getattr(self, f.name)
                for f in dataclasses.fields(self)}


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"seed", "data_seed", "steps", "batch", "eval_every",
               "sync_pretrain_steps", "bins"}
_FLOAT_FIELDS = {"lr", "alpha_max", "kernel_scale", "w_un", "w_ad",
                 "w_pe", "w_sync"}
_BOOL_FIELDS = {name for name in _FIELDS if name.startswith("enable_")}


def _coerce(name, value):
    if name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(f"config field '{name}' must be a boolean, "
                              f"got {value!r}")
        return value
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config field '{name}' must be an integer, "
                              f"got {value!r}")
        return value
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config field '{name}' must be a number, "
                              f"got {value!r}")
        return float(value)
    if name == "kernel_bandwidth":
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("config field 'kernel_bandwidth' must be a "
                              f"number or null, got {value!r}")
        return float(value)
    if name in ("spacing", "out_dir"):
        if name == "out_dir" and value is None:
            return None
        if not isinstance(value, str):
            raise ConfigError(f"config field '{name}' must be a string, "
                              f"got {value!r}")
        return value
    raise ConfigError(f"unknown config field '{name}'")


def config_from_dict(doc):
    """Build a validated RunConfig from a plain mapping."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    values = {}
    for key, value in doc.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, value)
    return RunConfig(**values)


def load_config(path):
    """Parse a JSON config file; an empty object means all defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return config_from_dict(doc)


def config_hash(cfg):
    """Stable hash of everything that affects training (out_dir excluded)."""
    doc = cfg.to_dict()
    doc.pop("out_dir")
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
