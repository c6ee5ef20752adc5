"""Experiment configuration: a versioned YAML schema where unknown keys are errors."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .envs import (
    BeachBar2DConfig,
    DistributionSet,
    Exploration1DConfig,
    make_beach_bar_2d,
    make_exploration_1d,
    make_testing_set,
    make_training_set,
)
from .qlearn import RLConfig

SCHEMA_VERSION = 1
MODES = ("exact", "dqn")


class ConfigError(ValueError):
    pass


_ENV_KEYS = {
    "exploration_1d": {"kind", "size", "gamma", "mu_clip", "move_cost_scale"},
    "beach_bar_2d": {"kind", "width", "height", "bar", "gamma", "mu_clip", "move_cost_scale", "four_moves"},
}
_SECTIONS = {
    "training": {"means", "variance"},
    "testing": {"variances", "n_random"},
    "fp": {"specialized_iterations", "master_iterations", "conditioning"},
    "rl": set(RLConfig.__dataclass_fields__) - {"seed"},
}
_TOP = {"schema_version", "seed", "horizon", "mode", "output_dir", "environment"} | set(_SECTIONS)


@dataclass(frozen=True)
class FPConfig:
    specialized_iterations: int = 20
    master_iterations: int = 10
    conditioning: str = "bank"

    def __post_init__(self):
        if self.specialized_iterations < 2 or self.master_iterations < 1:
            raise ConfigError("need at least 2 specialized and 1 master iteration")
        if self.conditioning not in ("bank", "self"):
            raise ConfigError(f"fp.conditioning must be 'bank' or 'self', got {self.conditioning!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict
    seed: int = 0
    horizon: int = 30
    mode: str = "exact"
    training: dict = field(default_factory=dict)
    testing: dict = field(default_factory=dict)
    fp: FPConfig = FPConfig()
    rl: RLConfig = RLConfig()
    output_dir: Optional[str] = None

    # construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        _reject_unknown(raw, _TOP, "top level")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        if "seed" not in raw:
            raise ConfigError("seed is required")
        env = dict(raw.get("environment") or {})
        kind = env.get("kind")
        if kind not in _ENV_KEYS:
            raise ConfigError(f"environment.kind must be one of {sorted(_ENV_KEYS)}, got {kind!r}")
        _reject_unknown(env, _ENV_KEYS[kind], "environment")
        for name in _SECTIONS:
            _reject_unknown(raw.get(name) or {}, _SECTIONS[name], name)
        seed = raw["seed"]
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        horizon = raw.get("horizon", 30)
        if not isinstance(horizon, int) or horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        mode = raw.get("mode", "exact")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        try:
            fp = FPConfig(**(raw.get("fp") or {}))
            rl = RLConfig(**(raw.get("rl") or {}), seed=seed % 2**32)
            cfg = cls(env, seed, horizon, mode, dict(raw.get("training") or {}), dict(raw.get("testing") or {}), fp, rl, raw.get("output_dir"))
            cfg.make_env()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def with_overrides(self, seed=None, mode=None, output_dir=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, seed=seed, rl=replace(cfg.rl, seed=seed % 2**32))
        if mode is not None:
            if mode not in MODES:
                raise ConfigError(f"mode must be one of {MODES}")
            cfg = replace(cfg, mode=mode)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg

    def snapshot(self) -> dict:
        """Plain-data view, the form recorded in run manifests."""
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "horizon": self.horizon,
            "mode": self.mode,
            "environment": dict(self.environment),
            "training": dict(self.training),
            "testing": dict(self.testing),
            "fp": {
                "specialized_iterations": self.fp.specialized_iterations,
                "master_iterations": self.fp.master_iterations,
                "conditioning": self.fp.conditioning,
            },
            "rl": {k: v for k, v in self.rl.to_dict().items() if k != "seed"},
        }

    # derived objects ------------------------------------------------------

    def make_env(self):
        params = {k: v for k, v in self.environment.items() if k != "kind"}
        if self.environment["kind"] == "exploration_1d":
            return make_exploration_1d(Exploration1DConfig(**params))
        if "bar" in params and params["bar"] is not None:
            params["bar"] = tuple(params["bar"])
        return make_beach_bar_2d(BeachBar2DConfig(**params))

    def seed_for(self, name: str) -> int:
        """Seed of the named substream; each stream depends only on the root seed and its name."""
        seq = np.random.SeedSequence([self.seed % 2**32, self.seed >> 32, zlib.crc32(name.encode())])
        return int(seq.generate_state(1)[0])

    def training_set(self, env) -> DistributionSet:
        return make_training_set(env.space, self.training.get("means"), self.training.get("variance"))

    def testing_set(self, env) -> DistributionSet:
        return make_testing_set(
            env.space,
            self.training.get("means"),
            self.testing.get("variances"),
            self.testing.get("n_random", 2),
            seed=self.seed_for("env-sampling"),
        )


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


DEFAULT_CONFIG_YAML = """\
schema_version: 1
seed: 0
horizon: 30
mode: exact
environment:
  kind: exploration_1d
  size: 32
  gamma: 0.9
  mu_clip: 1.0e-10
fp:
  specialized_iterations: 20
  master_iterations: 10
  conditioning: bank
rl:
  hidden: [64, 64]
  fit_max_iter: 200
"""
