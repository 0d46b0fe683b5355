"""Run configuration: one JSON file with a section per component.

Sections are ``gen``, ``augment``, ``model``, ``train`` and ``eval``. Every
field has a default, unknown sections or keys are rejected, and command
line flags are applied on top of the loaded file.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace

from .augment import AugConfig
from .errors import ConfigError
from .neural.model import ModelConfig
from .neural.training import TrainConfig
from .synth import GenConfig, NoiseConfig


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = -1.0
    shots: int = 4
    tip_alpha: float = 1.0
    tip_beta: float = 5.5
    probe_l2: float = 1e-3
    test_fraction: float = 0.25
    n_perm: int = 1000
    alpha: float = 0.05

    def __post_init__(self):
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [-1, 1]")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    augment: AugConfig = field(default_factory=AugConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, gen=replace(self.gen, rng_seed=seed),
                       augment=replace(self.augment, rng_seed=seed),
                       model=replace(self.model, init_seed=seed),
                       train=replace(self.train, rng_seed=seed))


_SECTIONS = {f.name: f for f in fields(RunConfig)}
_TYPES = {"gen": GenConfig, "augment": AugConfig, "model": ModelConfig, "train": TrainConfig,
          "eval": EvalConfig}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = dict(values)
    if cls is GenConfig and "noise" in kwargs:
        kwargs["noise"] = _build(NoiseConfig, kwargs["noise"], f"{where}.noise")
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return RunConfig(**{k: _build(_TYPES[k], v, k) for k, v in d.items()})


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(d)
