"""Experiment configuration.

A config is a JSON object with sections ``data``, ``model``, ``loss``,
``train`` and ``eval`` plus a top-level ``seed``.  Missing keys take the
desk-scale defaults below; unknown keys are rejected so typos surface early.
The environment variable ``MODOT_SEED`` overrides ``seed``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

SEED_ENV = "MODOT_SEED"


@dataclass
class DataConfig:
    width: int = 64
    height: int = 64
    num_samples: int = 8
    min_primitives: int = 2
    max_primitives: int = 4
    kinds: tuple[str, ...] = ("rectangle", "slanted_plane", "sphere", "open_box")
    depth_range: tuple[float, float] = (1.0, 8.0)
    textures: tuple[str, ...] = ("flat", "noise", "stripes")
    fov_deg: float = 60.0
    # OB annotation
    contrast_threshold: float = 0.05
    rim_angle_deg: float = 5.0
    split_fraction: float = 0.8


@dataclass
class EncoderConfig:
    kind: str = "window"  # "window" | "conv"
    base_channels: int = 16
    window_size: int = 4
    depths: tuple[int, ...] = (2, 2, 2, 2)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    mlp_ratio: float = 2.0


@dataclass
class CASMConfig:
    reduction: int = 4
    strip_kernels: tuple[int, ...] = (7, 11)
    square_branches: int = 1


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    casm: CASMConfig = field(default_factory=CASMConfig)
    tasks: str = "joint"  # "joint" | "depth"
    use_casm: bool = True
    use_eip: bool = True
    use_ssr: bool = True
    max_depth: float = 10.0
    eip_channels: int = 16
    ssr_channels: int = 16
    ssr_common_channels: int = 16


@dataclass
class LossConfig:
    w_d: float = 1.2
    w_ob: float = 1.0
    w_c: float = 0.1
    silog_lambda: float = 0.85
    silog_alpha: float = 10.0
    cce_eps: float = 1e-6
    n: int = 1
    margin: float = 1.0
    variant: str = "literal"  # "literal" | "hinge"
    side_weights: tuple[float, ...] | None = None


@dataclass
class TrainConfig:
    data_root: str = "data"
    out_dir: str = "runs/toy"
    crop_size: int = 64
    batch_size: int = 4
    steps_stage1: int = 500
    steps_stage2: int = 200
    lr: float = 1e-4
    lr_end: float = 1e-5
    weight_decay: float = 0.0
    hflip: bool = True
    color_jitter: float = 0.0
    checkpoint_every: int = 0
    log_every: int = 1
    stage1_ckpt: str | None = None


@dataclass
class EvalConfig:
    depth_cap: float = 10.0
    min_depth: float = 1e-3
    ob_threshold: float = 0.7
    tolerance_radius: int = 0
    pr_thresholds: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass
class Config:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return _to_jsonable(dataclasses.asdict(self))

    def validate(self) -> "Config":
        d = self.data
        if d.width % 32 or d.height % 32:
            raise ConfigError(f"data.width/height must be multiples of 32, got {d.width}x{d.height}")
        z0, z1 = d.depth_range
        if not 0 < z0 < z1:
            raise ConfigError(f"data.depth_range must satisfy 0 < z_min < z_max, got {d.depth_range}")
        if d.min_primitives < 1 or d.max_primitives < d.min_primitives:
            raise ConfigError("data primitive counts must satisfy 1 <= min <= max")
        if d.contrast_threshold <= 0:
            raise ConfigError("data.contrast_threshold must be positive")
        if not 0.0 < d.split_fraction <= 1.0:
            raise ConfigError("data.split_fraction must lie in (0, 1]")
        e = self.model.encoder
        if e.base_channels < 8:
            raise ConfigError("model.encoder.base_channels must be >= 8")
        if e.kind not in ("window", "conv"):
            raise ConfigError(f"unknown model.encoder.kind {e.kind!r}")
        if len(e.depths) != 4 or len(e.heads) != 4:
            raise ConfigError("model.encoder.depths/heads need one entry per stage (4)")
        if self.model.tasks not in ("joint", "depth"):
            raise ConfigError(f"unknown model.tasks {self.model.tasks!r}")
        if self.model.max_depth <= 0:
            raise ConfigError("model.max_depth must be positive")
        lo = self.loss
        if min(lo.w_d, lo.w_ob, lo.w_c) < 0:
            raise ConfigError("loss weights must be non-negative")
        if lo.variant not in ("literal", "hinge"):
            raise ConfigError(f"unknown loss.variant {lo.variant!r}")
        if lo.n < 1:
            raise ConfigError("loss.n must be >= 1")
        t = self.train
        if t.crop_size % 32:
            raise ConfigError(f"train.crop_size must be a multiple of 32, got {t.crop_size}")
        if t.steps_stage1 < 1 or t.steps_stage2 < 1 or t.batch_size < 1:
            raise ConfigError("train step counts and batch size must be >= 1")
        if not 0.0 <= self.eval.ob_threshold <= 1.0:
            raise ConfigError("eval.ob_threshold must lie in [0, 1]")
        return self


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _build(cls, values: dict[str, Any], path: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys under {path or '<root>'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        f = known[name]
        default = getattr(cls(), name)
        key = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(values: dict[str, Any], env: bool = True) -> Config:
    try:
        cfg = _build(Config, dict(values), "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if env and os.environ.get(SEED_ENV):
        try:
            cfg.seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return cfg.validate()


def load_config(path: str | os.PathLike | None, env: bool = True) -> Config:
    if path is None:
        return config_from_dict({}, env=env)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(values, env=env)
