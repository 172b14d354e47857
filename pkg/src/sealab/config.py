"""Run configuration: flat dotted keys over the world, train, augment, and probe sections."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .augment import AugmentConfig
from .errors import ValidationError
from .evalprobe.probes import PROBE_KINDS
from .trainer import TrainConfig
from .world import WorldConfig


@dataclass(frozen=True)
class ProbeConfig:
    iterations: int = 500
    lr0: float = 0.01
    split_seed: int = 0
    tasks: tuple = PROBE_KINDS

    def validate(self):
        if self.iterations <= 0 or self.lr0 <= 0:
            raise ValidationError("probe.iterations and probe.lr0 must be positive")
        bad = [t for t in self.tasks if t not in PROBE_KINDS]
        if bad:
            raise ValidationError(f"unknown probe task(s): {', '.join(map(str, bad))}")


_SECTIONS = {"world": WorldConfig, "train": TrainConfig, "augment": AugmentConfig, "probe": ProbeConfig}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def to_flat(self) -> dict:
        out = {}
        for section in _SECTIONS:
            for k, v in asdict(getattr(self, section)).items():
                out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out

    def validate(self):
        self.world.validate()
        self.train.validate()
        self.probe.validate()
        return self

    def snapshot(self, out_dir, name="config.json"):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_flat(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path


def _coerce(key, value, current):
    """Match the type of the default; strings from the command line are parsed as JSON first."""
    if isinstance(current, tuple) and isinstance(value, str) and not value.lstrip().startswith("["):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ValidationError(f"{key}: cannot parse {value!r}") from None
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ValidationError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{key}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(current, str) and not isinstance(value, str):
        raise ValidationError(f"{key}: expected a string, got {value!r}")
    return value


def build_config(file_values=None, overrides=None, env=None) -> RunConfig:
    """Merge SEA_SEED (lowest), then the config file, then command-line overrides.

    SEA_SEED sets world.seed and train.seed unless a higher layer sets them.
    Unknown keys raise ValidationError naming the key.
    """
    env = os.environ if env is None else env
    merged = {}
    if env.get("SEA_SEED") not in (None, ""):
        merged["world.seed"] = env["SEA_SEED"]
        merged["train.seed"] = env["SEA_SEED"]
    for layer in (file_values or {}, overrides or {}):
        if not isinstance(layer, dict):
            raise ValidationError("config must be a JSON object of dotted keys")
        merged.update(layer)

    defaults = RunConfig()
    sections = {name: {} for name in _SECTIONS}
    for key, value in merged.items():
        section, _, name = str(key).partition(".")
        if section not in _SECTIONS or not name:
            raise ValidationError(f"unknown config key {key!r}")
        known = {f.name for f in fields(_SECTIONS[section])}
        if name not in known:
            raise ValidationError(f"unknown config key {key!r}")
        sections[section][name] = _coerce(key, value, getattr(getattr(defaults, section), name))
    try:
        cfg = RunConfig(**{s: replace(getattr(defaults, s), **v) for s, v in sections.items()})
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return cfg.validate()


def load_config(path=None, overrides=None, env=None) -> RunConfig:
    file_values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    return build_config(file_values, overrides, env)
