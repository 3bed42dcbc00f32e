"""Run configuration: a YAML file with sections model/data/loss/optim/run plus dotted overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .generator import PRESETS, ImageGenConfig
from .losses import LossWeights

PHASES = ("parsing", "image", "joint")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    parsing_widths: tuple = (32, 64, 128, 128)
    n_gated: int = 4
    preset: str = "full"
    image: ImageGenConfig = field(default_factory=ImageGenConfig)
    sigma: Optional[float] = None  # heatmap width; None scales 6 px @ 256 linearly


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | dir
    root: Optional[str] = None
    pair_list: str = "pairs.txt"
    n: int = 8
    seed: int = 0
    size: int = 64


@dataclass
class LossConfig:
    lambda_pl: float = 5.0
    lambda_c: float = 1.0
    lambda_l: float = 5.0
    lambda_p: float = 1.0
    lambda_s: float = 100.0
    lambda_a: float = 1.0
    parsing_in_joint: bool = True

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_c, self.lambda_l, self.lambda_p, self.lambda_s, self.lambda_a)


@dataclass
class OptimConfig:
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RunConfig:
    phase: str = "parsing"
    steps: int = 100
    batch: int = 1
    seed: int = 0
    run_dir: Optional[str] = None
    ckpt_every: int = 0  # 0: only at the end
    extractor: str = "stub"  # "stub" or a path to VGG-19 weights
    extractor_seed: int = 0
    parsing_source: str = "ground_truth"  # ground_truth | frozen_stage1
    ckpt_parsing: Optional[str] = None
    ckpt_image: Optional[str] = None
    init: Optional[str] = None  # warm-start weights only
    resume: Optional[str] = None  # weights + optimizer state + step


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def image_config(self) -> ImageGenConfig:
        return dataclasses.replace(self.model.image, **PRESETS[self.model.preset])

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def validate(self) -> "TrainConfig":
        r, o = self.run, self.optim
        if r.phase not in PHASES:
            raise ConfigError(f"run.phase must be one of {PHASES}, got {r.phase!r}")
        if r.steps <= 0 or r.batch <= 0:
            raise ConfigError("run.steps and run.batch must be positive")
        if not (o.lr_g > 0 and o.lr_d > 0):
            raise ConfigError("learning rates must be positive")
        if r.parsing_source not in ("ground_truth", "frozen_stage1"):
            raise ConfigError("run.parsing_source must be ground_truth or frozen_stage1")
        if r.phase == "image" and r.parsing_source == "frozen_stage1" and not r.ckpt_parsing:
            raise ConfigError("run.ckpt_parsing is required when run.parsing_source is frozen_stage1")
        if r.phase == "joint" and not (r.ckpt_parsing and r.ckpt_image):
            missing = "run.ckpt_parsing" if not r.ckpt_parsing else "run.ckpt_image"
            raise ConfigError(f"joint training needs {missing}")
        if self.model.preset not in PRESETS:
            raise ConfigError(f"model.preset must be one of {sorted(PRESETS)}")
        if self.model.image.pool_mode not in ("joint", "global", "local"):
            raise ConfigError("model.image.pool_mode must be joint, global or local")
        if self.data.source not in ("synthetic", "dir"):
            raise ConfigError("data.source must be synthetic or dir")
        if self.data.source == "dir" and not self.data.root:
            raise ConfigError("data.root is required when data.source is dir")
        if self.data.size % 16:
            raise ConfigError("data.size must be a multiple of 16")
        try:
            self.loss.weights()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.loss.lambda_pl < 0:
            raise ConfigError("loss.lambda_pl must be non-negative")
        return self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(f'{where}{k}' for k in unknown))}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}{name}.")
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}{name} must be a boolean")
            kwargs[name] = value
        elif isinstance(current, float):
            if isinstance(value, str):
                # YAML 1.1 reads "1e-3" (no dot) as a string
                try:
                    value = float(value)
                except ValueError:
                    pass
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}{name} must be a number")
            kwargs[name] = float(value)
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}{name} must be an integer")
            kwargs[name] = value
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _set_dotted(tree: dict, key: str, value) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def load_config(path=None, overrides=(), base: dict = None) -> TrainConfig:
    """File values, then ``base`` (e.g. CLI flags), then ``section.key=value`` overrides."""
    tree = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {path}: {e}") from None
    for k, v in (base or {}).items():
        _set_dotted(tree, k, v)
    for o in overrides:
        k, v = parse_override(o)
        _set_dotted(tree, k, v)
    return _build(TrainConfig, tree, "").validate()


def dump_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
