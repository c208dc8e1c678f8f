"""Experiment files.

One ``key = value`` pair per line; ``#`` starts a comment; blank lines are
ignored. Keys are dotted (``train.patience``) and list values are comma
separated. Unknown keys are rejected so typos do not silently fall back to
defaults. Example::

    seed = 7
    data.source = world          # or: files
    world.train = 500
    model.variants = uav-adnet, vae
    train.epochs_max = 60
    eval.thresholds = 0.5

Relative paths resolve against the experiment file's directory, or against
``$UAV_ADNET_DATA`` when that variable is set.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, MissingFileError, ParseError
from .grid import GridSpec
from .nn import VARIANTS, ModelConfig
from .training import TrainOptions

DATA_DIR_ENV = "UAV_ADNET_DATA"

# key -> (type, default)
SCHEMA = {
    "seed": (int, 0),
    "grid.rows": (int, 8),
    "grid.cols": (int, 8),
    "grid.frame_width": (int, 1920),
    "grid.frame_height": (int, 1080),
    "data.source": (str, "world"),
    "data.annotations": (str, ""),
    "data.flight_log": (str, ""),
    "data.split": ("floats", (0.6, 0.1, 0.3)),
    "data.max_gap_ms": (float, 500.0),
    "world.train": (int, 500),
    "world.val": (int, 100),
    "world.test": (int, 100),
    "synth.rules": (str, "default"),
    "synth.scenarios": ("ints", (1, 2, 3)),
    "synth.per_source": (int, 1),
    "synth.count": (int, 1),
    "model.variants": ("strs", tuple(VARIANTS)),
    "model.hidden_sizes": ("ints", (256, 128)),
    "model.latent_dim": (int, 32),
    "model.kl_weight": (float, 1e-3),
    "train.epochs_max": (int, 200),
    "train.batch_size": (int, 32),
    "train.learning_rate": (float, 1e-3),
    "train.patience": (int, 10),
    "eval.thresholds": ("floats", (0.5,)),
    "eval.sweep": (bool, False),
    "eval.average": (str, "micro"),
}

PATH_KEYS = ("data.annotations", "data.flight_log", "synth.rules")


def _convert(key, kind, raw: str):
    raw = raw.strip()
    try:
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "strs":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_pairs(text: str, source: str = "<string>") -> dict:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=line_no, path=source)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r}", line=line_no, path=source)
        values[key] = _convert(key, SCHEMA[key][0], raw)
    return values


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v for k, (_, v) in SCHEMA.items()})
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_file(cls, path, overrides=()) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(path)
        cfg = cls(base_dir=path.resolve().parent)
        cfg.values.update(parse_pairs(path.read_text(encoding="utf-8"), str(path)))
        cfg.apply_overrides(overrides)
        return cfg

    def apply_overrides(self, overrides) -> None:
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, raw = item.split("=", 1)
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            self.values[key] = _convert(key, SCHEMA[key][0], raw)

    def __getitem__(self, key):
        return self.values[key]

    def resolve(self, value: str) -> Path:
        p = Path(value)
        if p.is_absolute():
            return p
        env = os.environ.get(DATA_DIR_ENV)
        return (Path(env) if env else self.base_dir) / p

    def validate(self) -> "RunConfig":
        v = self.values
        if v["data.source"] not in ("world", "files"):
            raise ConfigError("data.source must be 'world' or 'files'")
        if v["data.source"] == "files":
            for key in ("data.annotations", "data.flight_log"):
                if not v[key]:
                    raise ConfigError(f"{key} is required when data.source = files")
                if not self.resolve(v[key]).is_file():
                    raise MissingFileError(self.resolve(v[key]))
        if v["synth.rules"] != "default" and not self.resolve(v["synth.rules"]).is_file():
            raise MissingFileError(self.resolve(v["synth.rules"]))
        for name in v["model.variants"]:
            if name not in VARIANTS:
                raise ConfigError(f"unknown model variant {name!r}")
        for s in v["synth.scenarios"]:
            if s not in (1, 2, 3):
                raise ConfigError(f"scenario must be 1, 2 or 3, got {s}")
        if v["eval.average"] not in ("micro", "macro"):
            raise ConfigError("eval.average must be micro or macro")
        self.grid_spec()
        self.train_options()
        return self

    def grid_spec(self) -> GridSpec:
        v = self.values
        return GridSpec(v["grid.rows"], v["grid.cols"], frame_width_px=v["grid.frame_width"],
                        frame_height_px=v["grid.frame_height"])

    def model_config(self, variant: str, grid_len: int) -> ModelConfig:
        v = self.values
        return ModelConfig.for_variant(variant, grid_len, hidden_sizes=v["model.hidden_sizes"],
                                       latent_dim=v["model.latent_dim"], kl_weight=v["model.kl_weight"])

    def train_options(self) -> TrainOptions:
        v = self.values
        return TrainOptions(epochs_max=v["train.epochs_max"], batch_size=v["train.batch_size"],
                            learning_rate=v["train.learning_rate"], patience=v["train.patience"],
                            seed=v["seed"])

    def to_text(self) -> str:
        lines = []
        for key in SCHEMA:
            value = self.values[key]
            if isinstance(value, tuple):
                value = ",".join(str(x) for x in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}

    def digest(self, keys) -> str:
        payload = json.dumps({k: self.as_dict()[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]
