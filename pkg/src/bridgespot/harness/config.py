"""Experiment configuration and the plain-text ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from ..datasynth import SPLIT_SIZES, SceneConfig
from ..nn import INIT_MODES

PARADIGMS = ("two_step", "two_step_finetune", "end_to_end", "bridge")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    # learning rates and regularization
    det_lr: float = 1e-3
    rec_lr: float = 1e-3
    bridge_lr: float = 1e-3
    finetune_lr: float = 3e-4
    weight_decay: float = 1e-4
    # schedule
    det_iters: int = 5000
    rec_iters: int = 5000
    bridge_iters: int = 10000
    finetune_iters: int = 2000
    e2e_iters: int = 5000
    batch_size: int = 8
    rec_batch_size: int = 32
    # bridge stage
    encoder_depth: int = 1
    bridge_init: str = "zero"
    use_bridge: bool = True
    det_adapter: bool = True
    rec_adapter: bool = True
    lambda_det: float = 1.0
    lambda_rec: float = 1.0
    paradigm: str = "bridge"
    # data
    det_train_size: int = SPLIT_SIZES["det_train"]
    rec_train_size: int = SPLIT_SIZES["rec_train"]
    bridge_train_size: int = SPLIT_SIZES["bridge_train"]
    test_size: int = SPLIT_SIZES["test"]
    noise_std: float = 0.05
    distractors: int = 3
    n_strings: int = 2
    # evaluation
    curve_points: int = 10
    log_every: int = 500

    def __post_init__(self):
        validate(self)

    @property
    def scene(self) -> SceneConfig:
        return SceneConfig(noise_std=self.noise_std, distractors=self.distractors,
                           n_strings=self.n_strings)

    @property
    def split_sizes(self) -> dict[str, int]:
        return {"det_train": self.det_train_size, "rec_train": self.rec_train_size,
                "bridge_train": self.bridge_train_size, "test": self.test_size}

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self, keys=None) -> str:
        """Short stable hash over ``keys`` (all fields by default)."""
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# fields each stage's result depends on; used to key cached checkpoints
DATA_KEYS = ("seed", "noise_std", "distractors", "n_strings")
STAGE_KEYS = {
    "detector": DATA_KEYS + ("det_lr", "weight_decay", "det_iters", "batch_size",
                             "det_train_size"),
    "recognizer": DATA_KEYS + ("rec_lr", "weight_decay", "rec_iters", "rec_batch_size",
                               "rec_train_size"),
}


def validate(cfg: ExperimentConfig) -> None:
    for name in ("det_lr", "rec_lr", "bridge_lr", "finetune_lr"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.weight_decay < 0:
        raise ConfigError("weight_decay must be non-negative")
    for name in ("det_iters", "rec_iters", "bridge_iters", "finetune_iters", "e2e_iters"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    if cfg.batch_size < 1 or cfg.rec_batch_size < 1:
        raise ConfigError("batch sizes must be positive")
    if cfg.encoder_depth < 0:
        raise ConfigError("encoder_depth must be non-negative")
    if cfg.bridge_init not in INIT_MODES:
        raise ConfigError(f"bridge_init must be one of {INIT_MODES}")
    if cfg.paradigm not in PARADIGMS:
        raise ConfigError(f"paradigm must be one of {PARADIGMS}")
    if min(cfg.split_sizes.values()) < 1:
        raise ConfigError("split sizes must be positive")
    if cfg.noise_std < 0 or cfg.distractors < 0 or cfg.n_strings < 1:
        raise ConfigError("invalid scene parameters")
    if cfg.curve_points < 1:
        raise ConfigError("curve_points must be positive")


def _coerce(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc


def field_types() -> dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__
            for f in fields(ExperimentConfig)}


def parse_config_text(text: str) -> dict:
    """``key = value`` (or ``key: value``) per line; ``#`` starts a comment."""
    types = field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = parts
        else:
            key, value = line.split(sep, 1)
        key = key.strip().replace("-", "_")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(types[key], value, key)
    return out


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
