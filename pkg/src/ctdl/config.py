"""Run configuration: nested dataclasses, strict parsing and dotted overrides.

Config files are YAML or JSON mappings whose sections mirror the dataclasses
below. Unknown keys and wrongly typed values are rejected with the full dotted
path of the offending entry.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: typing.Optional[int] = None  # per-task default when unset


def _ring_means(modes=8, radius=4.0):
    return [[radius * math.cos(2 * math.pi * i / modes), radius * math.sin(2 * math.pi * i / modes)]
            for i in range(modes)]


@dataclass
class MixtureConfig:
    weights: list[float] = field(default_factory=lambda: [0.125] * 8)
    means: list[list[float]] = field(default_factory=_ring_means)
    stdevs: list[float] = field(default_factory=lambda: [0.4] * 8)


def _mfg_target():
    return MixtureConfig(weights=[0.5, 0.5], means=[[-1.0, 4.0], [1.0, 4.0]], stdevs=[0.7, 0.7])


@dataclass
class ObstacleConfig:
    center: list[float] = field(default_factory=lambda: [0.0, 2.0])
    height: float = 50.0
    width: float = 0.5


@dataclass
class ClassifyConfig:
    pad: int = 1
    count: int = 512
    inner: float = 1.0
    outer: float = 2.0
    noise: float = 0.1
    batch: int = 64
    test_count: int = 2000
    grid_lim: float = 3.0
    grid_res: int = 61


@dataclass
class CnfConfig:
    alpha: float = 0.1
    batch: int = 256
    train_samples: int = 8192
    test_samples: int = 10000
    export_count: int = 64
    target: MixtureConfig = field(default_factory=MixtureConfig)


@dataclass
class MfgConfig:
    variant: typing.Optional[str] = None
    alpha: float = 0.1
    beta: float = 5.0
    entropy_weight: float = 0.1
    terminal_weight: float = 5.0
    batch: int = 128
    lr_final: typing.Optional[float] = 5e-4
    eval_batch: int = 256
    epoch_size: int = 100
    target: MixtureConfig = field(default_factory=_mfg_target)
    obstacle: ObstacleConfig = field(default_factory=ObstacleConfig)


@dataclass
class RunConfig:
    task: str = "classify"
    scheme: str = "rk4"
    seed: int = 0
    out: str = "runs/latest"
    steps_train: int = 32
    steps_eval: int = 64
    hidden: typing.Optional[int] = None  # per-task default when unset
    n_intervals: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    cnf: CnfConfig = field(default_factory=CnfConfig)
    mfg: MfgConfig = field(default_factory=MfgConfig)


TASKS = ("classify", "cnf", "mfg")
SCHEMES = ("euler", "rk4")
TASK_HIDDEN = {"classify": 16, "cnf": 16, "mfg": 32}
TASK_ITERATIONS = {"classify": 2000, "cnf": 2000, "mfg": 3000}


# ---------------------------------------------------------------------------


def _check_type(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _check_type(value, inner, path)
    if origin is list:
        (inner,) = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_check_type(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{path}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported type {tp}")


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _check_type(value, hints[name], sub)
    return cls(**kwargs)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def overrides_to_dict(overrides) -> dict:
    """Turn ``["mfg.alpha=0.5", ...]`` or ``{"mfg.alpha": 0.5}`` into a nested dict."""
    items = overrides.items() if isinstance(overrides, dict) else []
    if not isinstance(overrides, dict):
        pairs = []
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, text = item.split("=", 1)
            pairs.append((key.strip(), _parse_value(text)))
        items = pairs
    nested: dict = {}
    for key, value in items:
        parts = key.split(".")
        node = nested
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} conflicts with another override")
        node[parts[-1]] = value
    return nested


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.task not in TASKS:
        raise ConfigError(f"task: must be one of {TASKS}, got {cfg.task!r}")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"scheme: must be one of {SCHEMES}, got {cfg.scheme!r}")
    if cfg.hidden is None:
        cfg.hidden = TASK_HIDDEN[cfg.task]
    if cfg.optimizer.iterations is None:
        cfg.optimizer.iterations = TASK_ITERATIONS[cfg.task]
    for name in ("steps_train", "steps_eval", "hidden", "n_intervals"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name}: must be >= 1")
    if cfg.optimizer.iterations < 0 or cfg.optimizer.lr <= 0:
        raise ConfigError("optimizer: iterations must be >= 0 and lr > 0")
    if cfg.task == "classify":
        c = cfg.classify
        if c.pad < 0:
            raise ConfigError("classify.pad: must be >= 0")
        if not 0 < c.inner < c.outer:
            raise ConfigError("classify.inner/outer: need 0 < inner < outer")
    if cfg.task == "cnf" and cfg.cnf.alpha < 0:
        raise ConfigError("cnf.alpha: must be >= 0")
    if cfg.task == "mfg":
        m = cfg.mfg
        if m.variant is None:
            raise ConfigError("mfg.variant: required for task mfg (ot or crowd)")
        if m.variant not in ("ot", "crowd"):
            raise ConfigError(f"mfg.variant: must be 'ot' or 'crowd', got {m.variant!r}")
        if m.alpha <= 0:
            raise ConfigError("mfg.alpha: must be > 0")
        if m.lr_final is not None and not 0 < m.lr_final <= cfg.optimizer.lr:
            raise ConfigError("mfg.lr_final: must be in (0, optimizer.lr]")
        if len(m.obstacle.center) != len(m.target.means[0]):
            raise ConfigError("mfg.obstacle.center: dimension differs from the target")
    return cfg


def parse_config(path=None, overrides=None, echo: bool = False) -> RunConfig:
    """Load ``path`` (YAML/JSON), apply dotted ``overrides`` on top and validate.

    With ``echo=True`` the resolved config is written to ``<out>/config.json``.
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text()
        loaded = (json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded
    data = _merge(data, overrides_to_dict(overrides))
    cfg = validate(_build(RunConfig, data))
    if echo:
        write_config(cfg, Path(cfg.out) / "config.json")
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def write_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    path.write_text(json.dumps(config_dict(cfg), indent=2) + "\n")
