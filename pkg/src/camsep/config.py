"""INI-style run configuration with strict key checking.

Sections: ``[data]`` (all keys required when a dataset is generated),
``[train]``, ``[cluster]``, ``[loss]`` (optional keys, defaults below) and
``[run]`` (``run_id``, ``out_dir``, ``dataset``, ``eval_every``).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .clustering import ClusterConfig
from .errors import ConfigError
from .losses import LossWeights
from .synth_data import SynthConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    data: SynthConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    run_id: str = "run"
    out_dir: str = "runs"
    dataset: str = ""
    eval_every: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _convert(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}"
        ) from None


def _section(parser, name, cls, required=False):
    defaults = cls()
    known = {f.name for f in fields(cls) if not dataclasses.is_dataclass(getattr(defaults, f.name))}
    if not parser.has_section(name):
        if required:
            raise ConfigError(f"missing section [{name}]")
        return {}
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        values[key] = _convert(name, key, raw, getattr(defaults, key))
    if required:
        for key in sorted(known - values.keys(), key=[f.name for f in fields(cls)].index):
            raise ConfigError(f"[{name}] missing required field {key!r}")
    return values


@dataclass(frozen=True)
class _RunSection:
    run_id: str = "run"
    out_dir: str = "runs"
    dataset: str = ""
    eval_every: int = 1


def parse_config(text: str, require_data: bool = False) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    allowed = {"data", "train", "cluster", "loss", "run"}
    for name in parser.sections():
        if name not in allowed:
            raise ConfigError(f"unknown section [{name}]")

    data_vals = _section(parser, "data", SynthConfig, required=require_data)
    data = None
    if data_vals or require_data:
        data = SynthConfig(**data_vals)
        data.validate()

    cluster = ClusterConfig(**_section(parser, "cluster", ClusterConfig))
    weights = LossWeights(**_section(parser, "loss", LossWeights))
    train = TrainConfig(**_section(parser, "train", TrainConfig), cluster=cluster, weights=weights)
    train.validate()
    run = _section(parser, "run", _RunSection)
    return RunConfig(data=data, train=train, **run)


def load_config(path, require_data: bool = False) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, require_data)


def with_overrides(cfg: RunConfig, seed=None, epochs=None, out_dir=None) -> RunConfig:
    train = cfg.train
    if seed is not None:
        train = replace(train, seed=seed)
    if epochs is not None:
        train = replace(train, epochs=epochs)
    cfg = replace(cfg, train=train)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    return cfg
