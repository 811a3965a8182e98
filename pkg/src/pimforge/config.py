"""Run configuration: TOML files, presets and validation."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .losses import LossWeights
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class OptimConfig:
    learning_rate: float = 6e-5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decoupled: bool = True
    batch_size: int = 8
    steps: int = 2000
    validate_every: int = 0  # 0 disables periodic validation
    checkpoint_every: int = 0  # 0 writes only the final checkpoint

    def check(self) -> None:
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("optim: learning_rate must be > 0 and weight_decay >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optim: betas must lie in [0, 1)")
        if self.batch_size < 1 or self.steps < 0 or self.validate_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("optim: batch_size >= 1, steps/validate_every/checkpoint_every >= 0")


@dataclass
class AugmentConfig:
    rda: bool = True
    rda_probability: float = 0.25
    pida: bool = True
    pida_probability: float = 0.25

    def check(self) -> None:
        for name in ("rda_probability", "pida_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"augment: {name} must lie in [0, 1]")


@dataclass
class DataConfig:
    image_size: int = 64
    train_pristine: int = 200
    train_forged: int = 200
    test_pristine: int = 50
    test_forged: int = 50
    mix: dict = field(default_factory=lambda: {"splice": 0.5, "copy-move": 0.3, "inpaint": 0.2})
    area_min: float = 0.01
    area_max: float = 0.25
    mismatched_splice: bool = True

    def check(self) -> None:
        if self.image_size < 2 or self.image_size % 2:
            raise ConfigError("data: image_size must be even and >= 2")
        if min(self.train_pristine, self.train_forged, self.test_pristine, self.test_forged) < 0:
            raise ConfigError("data: sample counts must be nonnegative")
        if not 0 < self.area_min <= self.area_max <= 1:
            raise ConfigError("data: need 0 < area_min <= area_max <= 1")
        if not self.mix or any(v < 0 for v in self.mix.values()) or sum(self.mix.values()) <= 0:
            raise ConfigError("data: mix weights must be nonnegative with a positive sum")


@dataclass
class EvalConfig:
    threshold: float = 0.5
    batch_size: int = 8
    workers: int = 1

    def check(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("eval: threshold must lie in (0, 1)")
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigError("eval: batch_size and workers must be >= 1")


@dataclass
class PathsConfig:
    data_dir: str = "data"
    out_dir: str = "runs"


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def check(self) -> None:
        for part in (self.optim, self.augment, self.data, self.eval):
            part.check()
        if self.data.image_size % self.model.patch_size or self.data.image_size < 4 * self.model.patch_size:
            raise ConfigError(f"data.image_size={self.data.image_size} must be a multiple of "
                              f"model.patch_size={self.model.patch_size} and at least 4 patches")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


_SECTIONS = {"model": ModelConfig, "optim": OptimConfig, "loss": LossWeights, "augment": AugmentConfig,
             "data": DataConfig, "eval": EvalConfig, "paths": PathsConfig}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "mix" else v
    return out


PRESETS = {
    "desk": {},
    "paper-reference": {
        "model": {"dtype": "float32"},
        "optim": {"batch_size": 28, "steps": 20 * (5123 + 7491) // 28, "validate_every": 1600},
        "augment": {"rda": True, "pida": True},
        "data": {"image_size": 512},
    },
}


def _coerce(section: str, cls, values: dict) -> dict:
    """Check every value against the type of the field's default; ints widen to floats."""
    defaults = asdict(cls()) if cls is not ModelConfig else cls().to_dict()
    out = {}
    for key, value in values.items():
        want = type(defaults[key])
        ok = isinstance(value, want) and not (want is not bool and isinstance(value, bool))
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value, ok = float(value), True
        if want in (tuple, list) and isinstance(value, (tuple, list)):
            ok = True
        if not ok:
            raise ConfigError(f"[{section}] {key} must be {want.__name__}, got {value!r}")
        out[key] = value
    return out


def from_dict(raw: dict) -> RunConfig:
    """Build a config from a preset name plus overrides; unknown keys are errors."""
    raw = dict(raw)
    preset = raw.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = _merge(RunConfig(preset=preset).to_dict(), PRESETS[preset])
    merged = _merge(merged, raw)
    top = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {"preset": preset, "seed": merged["seed"]}
    for name, cls in _SECTIONS.items():
        section = merged[name]
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"[{name}] unknown keys: {sorted(bad)}")
        try:
            kwargs[name] = cls(**_coerce(name, cls, section))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    if not isinstance(kwargs["seed"], int) or kwargs["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    cfg = RunConfig(**kwargs)
    cfg.check()
    return cfg


def loads(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(raw)


def load(path, check_paths: bool = True) -> RunConfig:
    """Read a TOML file. Relative paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = loads(path.read_text(encoding="utf-8"))
    for name in ("data_dir", "out_dir"):
        p = Path(getattr(cfg.paths, name))
        if not p.is_absolute():
            p = path.parent / p
        if check_paths and not p.parent.exists():
            raise ConfigError(f"paths.{name}: parent directory {p.parent} does not exist")
        setattr(cfg.paths, name, str(p))
    return cfg
