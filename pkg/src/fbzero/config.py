"""Run configuration: one JSON file, strictly validated.

Top-level sections and their keys mirror the dataclasses they build::

    {
      "env":     {... toyenv.EnvConfig fields ...},
      "model":   {... nets.store.ModelConfig fields ...},
      "train":   {... trainer.TrainConfig fields ...},
      "sampler": {"mix_weights": [0.5, 0.25, 0.25]},
      "data":    {"motions": null, "generator": "sinusoid_joints",
                  "n_motions": 24, "n_frames": 200, "seed": 0},
      "out_dir": "runs/default",
      "deterministic": true,
      "threads": 1
    }

Every section and key is optional; anything not listed is rejected with its
location (e.g. ``train.lr_x``). ``FBZERO_SEED`` overrides ``train.seed``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field

from . import fbcore, toyenv, trainer
from .nets.store import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    motions: str | None = None  # path to a motion file; generated when None
    generator: str | None = None  # default per env kind
    n_motions: int = 24
    n_frames: int = 200
    seed: int = 0

    def validate(self):
        if self.n_motions < 1 or self.n_frames < 2:
            raise ConfigError("data.n_motions must be >= 1 and data.n_frames >= 2")


@dataclass
class RunConfig:
    env: toyenv.EnvConfig = field(default_factory=toyenv.EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: trainer.TrainConfig = field(default_factory=trainer.TrainConfig)
    sampler: fbcore.LatentSamplerConfig = field(default_factory=fbcore.LatentSamplerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/default"
    deterministic: bool = True
    threads: int = 1

    def to_dict(self):
        d = {
            "env": trainer.env_to_dict(self.env),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "sampler": {"mix_weights": list(self.sampler.mix_weights)},
            "data": asdict(self.data),
            "out_dir": self.out_dir,
            "deterministic": self.deterministic,
            "threads": self.threads,
        }
        return d

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @property
    def model_hash(self):
        return trainer.model_hash(self.env, self.model)

    @property
    def generator(self):
        if self.data.generator:
            return self.data.generator
        return "waypoint_loops" if self.env.env_kind == "pointmass" else "sinusoid_joints"


_SECTIONS = {
    "env": toyenv.EnvConfig,
    "model": ModelConfig,
    "train": trainer.TrainConfig,
    "sampler": fbcore.LatentSamplerConfig,
    "data": DataConfig,
}
_SCALARS = {"out_dir": str, "deterministic": bool, "threads": int}
_SAMPLER_KEYS = {"mix_weights"}


def _check_keys(section, raw, allowed):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object, got {type(raw).__name__}")
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}; allowed: {sorted(allowed)}")


def from_dict(raw: dict, seed_override=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    for key in raw:
        if key not in _SECTIONS and key not in _SCALARS:
            raise ConfigError(f"unknown key {key}; allowed: {sorted(set(_SECTIONS) | set(_SCALARS))}")
    built = {}
    for name, cls in _SECTIONS.items():
        sec = raw.get(name, {})
        allowed = _SAMPLER_KEYS if name == "sampler" else {f.name for f in dataclasses.fields(cls)}
        _check_keys(name, sec, allowed)
        try:
            if name == "sampler":
                obj = cls(mix_weights=tuple(sec.get("mix_weights", (0.5, 0.25, 0.25))))
            else:
                obj = cls(**sec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from None
        built[name] = obj
    for key, typ in _SCALARS.items():
        if key in raw and not isinstance(raw[key], typ):
            raise ConfigError(f"{key}: expected {typ.__name__}")
        if key in raw:
            built[key] = raw[key]
    cfg = RunConfig(**built)
    cfg.sampler.seq_len = cfg.train.seq_len
    if seed_override is not None:
        cfg.train.seed = int(seed_override)
    try:
        cfg.train.validate()
        cfg.model.validate()
        cfg.sampler.validate()
        cfg.data.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def load(path, seed=None) -> RunConfig:
    """Read ``path``; ``seed`` (then ``FBZERO_SEED``) overrides ``train.seed``."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if seed is None and os.environ.get("FBZERO_SEED"):
        seed = int(os.environ["FBZERO_SEED"])
    return from_dict(raw, seed)
