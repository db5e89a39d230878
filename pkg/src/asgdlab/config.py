"""Experiment configuration: nested sections with strict key checking."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentSection:
    name: str = "experiment"


@dataclass(frozen=True)
class DataSection:
    seed: int = 1
    n_sentences: int = 20000
    n_valid: int = 1000
    vocab: int = 16
    len_min: int = 5
    len_max: int = 20
    pattern: str = "default"


@dataclass(frozen=True)
class ModelSection:
    kind: str = "gru_lm"
    embed_dim: int = 8
    hidden: int = 16
    in_dim: int = 4
    classes: int = 3


@dataclass(frozen=True)
class BatchSection:
    word_budget: int = 500
    sort_window: int = 1000
    drop_oversized: bool = False


@dataclass(frozen=True)
class TrainSection:
    workers: int = 4
    tau: int = 1
    mode: str = "async"
    lr_mode: str = "mean_tokens"
    seed: int = 0
    max_epochs: int = 10
    max_updates: int = 0  # 0 = unlimited


@dataclass(frozen=True)
class OptimizerSection:
    base_lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ScheduleSection:
    warmup_steps: int = 0
    cooldown: str = "none"
    beta1_after: float = 0.9
    beta1_switch_step: int = 0


@dataclass(frozen=True)
class LocalOptSection:
    window: int = 0


@dataclass(frozen=True)
class SimSection:
    mode: str = "deterministic"
    tokens_per_sec: float = 10000.0
    push_overhead_sec: float = 0.05
    jitter: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class StopSection:
    patience: int = 5
    eval_every_updates: int = 50
    min_delta: float = 0.0
    target_ratio: float = 1.10


SECTIONS = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "model": ModelSection,
    "batch": BatchSection,
    "train": TrainSection,
    "optimizer": OptimizerSection,
    "schedule": ScheduleSection,
    "local_opt": LocalOptSection,
    "sim": SimSection,
    "stop": StopSection,
}

_CHOICES = {
    "model.kind": ("linear_regression", "mlp_classifier", "gru_lm"),
    "data.pattern": ("default", "cyclic", "uniform"),
    "train.mode": ("async", "sync"),
    "train.lr_mode": ("mean_tokens", "sum"),
    "schedule.cooldown": ("none", "inv_sqrt"),
    "sim.mode": ("deterministic", "concurrent"),
}
_AT_LEAST_ONE = ("data.n_sentences", "data.n_valid", "data.len_min", "model.embed_dim", "model.hidden",
                 "model.in_dim", "model.classes", "batch.word_budget", "batch.sort_window", "train.workers",
                 "train.tau", "train.max_epochs", "stop.patience", "stop.eval_every_updates")
_NON_NEGATIVE = ("train.max_updates", "schedule.warmup_steps", "schedule.beta1_switch_step",
                 "local_opt.window", "sim.push_overhead_sec", "sim.jitter", "stop.min_delta")
_POSITIVE = ("optimizer.base_lr", "optimizer.eps", "sim.tokens_per_sec", "stop.target_ratio")
_UNIT = ("optimizer.beta1", "optimizer.beta2", "schedule.beta1_after")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    batch: BatchSection = field(default_factory=BatchSection)
    train: TrainSection = field(default_factory=TrainSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    local_opt: LocalOptSection = field(default_factory=LocalOptSection)
    sim: SimSection = field(default_factory=SimSection)
    stop: StopSection = field(default_factory=StopSection)

    def get(self, path: str) -> Any:
        section, key = _split(path)
        return getattr(getattr(self, section), key)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **paths) -> "ExperimentConfig":
        """``cfg.replace(**{"train.tau": 2})`` returns a validated copy."""
        d = self.to_dict()
        for path, value in paths.items():
            section, key = _split(path)
            d[section][key] = value
        return from_dict(d)


def _split(path: str) -> tuple[str, str]:
    parts = path.split(".")
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError([f"{path}: not a config key path"])
    names = {f.name for f in dataclasses.fields(SECTIONS[parts[0]])}
    if parts[1] not in names:
        raise ConfigError([f"{path}: not a config key path"])
    return parts[0], parts[1]


def _coerce(path: str, value: Any, default: Any, problems: list[str]) -> Any:
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, str):
            # PyYAML reads exponent-only literals such as 1e-8 as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if not isinstance(value, str):
        problems.append(f"{path}: expected a string, got {value!r}")
    return value


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = copy.deepcopy(raw or {})
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a mapping of sections"])
    sections = {}
    for name in raw:
        if name not in SECTIONS:
            problems.append(f"{name}: unknown section")
    for name, cls in SECTIONS.items():
        given = raw.get(name) or {}
        if not isinstance(given, dict):
            problems.append(f"{name}: expected a mapping")
            given = {}
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        for key in given:
            if key not in known:
                problems.append(f"{name}.{key}: unknown key")
        values = {k: _coerce(f"{name}.{k}", v, getattr(defaults, k), problems)
                  for k, v in given.items() if k in known}
        sections[name] = cls(**values)
    cfg = ExperimentConfig(**sections)
    problems += _validate(cfg, {p.split(":")[0] for p in problems})
    if problems:
        raise ConfigError(problems)
    return cfg


def _validate(cfg: ExperimentConfig, skip: set[str]) -> list[str]:
    """Range checks; paths in ``skip`` already failed their type check."""
    problems = []
    checks = [(p, lambda v, c=c: v in c, f"must be one of {list(c)}") for p, c in _CHOICES.items()]
    checks += [(p, lambda v: v >= 1, "must be >= 1") for p in _AT_LEAST_ONE]
    checks += [(p, lambda v: v >= 0, "must be >= 0") for p in _NON_NEGATIVE]
    checks += [(p, lambda v: v > 0, "must be > 0") for p in _POSITIVE]
    checks += [(p, lambda v: 0 <= v < 1, "must lie in [0, 1)") for p in _UNIT]
    checks += [("data.vocab", lambda v: v >= 2, "must be >= 2"),
               ("data.len_max", lambda v: v >= cfg.data.len_min, "must be >= data.len_min"),
               ("sim.jitter", lambda v: v <= 0.6931471805599453, "must be <= ln 2 (jitter factor within [0.5, 2])")]
    for path, ok, message in checks:
        if path in skip:
            continue
        try:
            good = ok(cfg.get(path))
        except TypeError:
            continue
        if not good:
            problems.append(f"{path}: {message}, got {cfg.get(path)!r}")
    return problems


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def parse_value(text: str) -> Any:
    """Sweep values arrive as text; YAML scalars give ints, floats and strings."""
    value = yaml.safe_load(text)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    return value
