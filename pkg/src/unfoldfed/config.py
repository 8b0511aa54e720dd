"""Strict JSON experiment configuration.

Unknown fields are rejected outright: a silent typo in an experiment config
is the main way a reproduction goes wrong.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from . import nn
from .data import SETTING_IDS
from .unfolding import NORM_MODES, Seeds, UnfoldConfig

MODES = ("fedavg", "fixed-uniform", "unfolded")

DATA_PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels")


class ConfigError(ValueError):
    """Malformed, unknown, or out-of-range configuration."""


@dataclass
class ExperimentConfig:
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    out_dir: str = "out"
    mode: str = "unfolded"
    setting: str = "statistical"
    K: int = 5
    M: int = 100
    T: int = 10
    eta_g: float = 1.0
    eta_meta: float = 0.5
    lambda_model: float = 1e-4
    lambda_theta: float = 1e-4
    local_lr: float = 0.05
    batch_size: int = 32
    epochs: int = 1
    sizes: list[int] | None = None
    label_map: list[list[int]] | None = None
    epoch_list: list[int] | None = None
    participation_list: list[float] | None = None
    per_client: int = 1000
    val_size: int = 1000
    layer_dims: list[int] = field(default_factory=lambda: [784, 32, 10])
    seeds: dict = field(default_factory=lambda: {"model": 1, "data": 2, "rounds": 3})
    norm: str = "softmax"
    meta_objective: str = "validation"
    threads: int = 1
    emit_svg: bool = True

    def model_spec(self) -> nn.ModelSpec:
        return nn.ModelSpec(tuple(self.layer_dims))

    def seed_obj(self) -> Seeds:
        return Seeds(**self.seeds)

    def unfold_config(self) -> UnfoldConfig:
        return UnfoldConfig(
            K=self.K, M=self.M, T=self.T, model=self.model_spec(),
            eta_g=self.eta_g, eta_meta=self.eta_meta,
            lambda_model=self.lambda_model, lambda_theta=self.lambda_theta,
            seeds=self.seed_obj(), norm=self.norm,
            meta_objective=self.meta_objective, threads=self.threads,
        )

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            out[f.name] = getattr(self, f.name)
        return out


def _check(cfg: ExperimentConfig) -> None:
    def bad(name, why):
        raise ConfigError(f"config field {name!r}: {why}")

    if cfg.mode not in MODES:
        bad("mode", f"must be one of {MODES}, got {cfg.mode!r}")
    if cfg.setting not in SETTING_IDS:
        bad("setting", f"must be one of {SETTING_IDS}, got {cfg.setting!r}")
    for name in ("K", "M", "T", "batch_size", "epochs", "per_client",
                 "val_size", "threads"):
        if not isinstance(getattr(cfg, name), int) or getattr(cfg, name) < 1:
            bad(name, f"must be a positive integer, got {getattr(cfg, name)!r}")
    for name in ("eta_g", "local_lr"):
        if getattr(cfg, name) <= 0:
            bad(name, "must be positive")
    for name in ("eta_meta", "lambda_model", "lambda_theta"):
        if getattr(cfg, name) < 0:
            bad(name, "must be nonnegative")
    if cfg.norm not in NORM_MODES:
        bad("norm", f"must be one of {NORM_MODES}")
    if cfg.meta_objective not in ("validation", "client"):
        bad("meta_objective", "must be 'validation' or 'client'")
    if len(cfg.layer_dims) < 2 or any(d < 1 for d in cfg.layer_dims):
        bad("layer_dims", "needs >= 2 positive dims")
    if set(cfg.seeds) - {"model", "data", "rounds"}:
        bad("seeds", f"unknown seed keys {sorted(set(cfg.seeds) - {'model', 'data', 'rounds'})}")
    for name in ("sizes", "epoch_list", "participation_list", "label_map"):
        value = getattr(cfg, name)
        if value is not None and len(value) != cfg.K:
            bad(name, f"length {len(value)} != K={cfg.K}")
    if cfg.participation_list is not None:
        if any(not (0 < p <= 1) for p in cfg.participation_list):
            bad("participation_list", "entries must be in (0, 1]")


def resolve_data_path(path: str) -> str:
    """Fall back to $UNFOLDFED_DATA as dataset root for relative paths."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    root = os.environ.get("UNFOLDFED_DATA")
    if root:
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    merged = dict(raw)
    if "seeds" in merged:
        defaults = {"model": 1, "data": 2, "rounds": 3}
        if not isinstance(merged["seeds"], dict):
            raise ConfigError("config field 'seeds': must be an object")
        defaults.update(merged["seeds"])
        merged["seeds"] = defaults
    cfg = ExperimentConfig(**merged)
    _check(cfg)
    for key in DATA_PATH_KEYS:
        setattr(cfg, key, resolve_data_path(getattr(cfg, key)))
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"top-level config in {path} must be a JSON object")
    return from_dict(raw)
