"""
Experiment configuration: nested dataclasses loaded from JSON.

Unknown keys, wrong types and out-of-range values raise
:class:`~skillset.errors.ConfigError` naming the dotted field path.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .benchmarks import TASK_FACTORIES
from .errors import ConfigError
from .gp import KERNEL_KINDS
from .superlevel import PI_SCHEMES

SAMPLERS = ("rejection", "adaptive", "diverse")


@dataclass
class TaskConfig:
    kind: str = "pour"
    d_theta: int = 4
    d_alpha: int = 4
    volume: float = 0.1
    noise_std: float = 0.01
    seed: int = 0

    def check(self, path):
        _choice(path, "kind", self.kind, tuple(TASK_FACTORIES))
        _require(path, "d_theta", self.d_theta >= 1, "must be >= 1")
        _require(path, "d_alpha", self.d_alpha >= 0, "must be >= 0")
        _require(path, "volume", 0 < self.volume < 1, "must lie in (0, 1)")
        _require(path, "noise_std", self.noise_std >= 0, "must be >= 0")


@dataclass
class LearnerConfig:
    kernel: str = "se"
    strategy: str = "straddle"
    budget: int = 90
    n_seed: int = 10
    restarts: int = 2
    refit_every: int = 5
    prior_mean: typing.Union[float, str] = "fit"
    context_schedule: str = "iid"

    def check(self, path):
        _choice(path, "kernel", self.kernel, KERNEL_KINDS)
        _choice(path, "strategy", self.strategy, ("straddle", "random"))
        _choice(path, "context_schedule", self.context_schedule, ("iid", "round_robin"))
        _require(path, "budget", self.budget >= 0, "must be >= 0")
        _require(path, "n_seed", self.n_seed >= 0, "must be >= 0")
        _require(path, "restarts", self.restarts >= 1, "must be >= 1")
        _require(path, "refit_every", self.refit_every >= 1, "must be >= 1")
        if isinstance(self.prior_mean, str):
            _choice(path, "prior_mean", self.prior_mean, ("fit",))


@dataclass
class SamplerConfig:
    kind: str = "adaptive"
    n: int = 20
    m: int = 100
    quantile: float = 0.95
    count: int = 50
    max_rounds: int = 1000
    max_proposals: int = 1_000_000
    diversity_noise: float = 0.1
    pi_scheme: str = "infinite"

    def check(self, path):
        _choice(path, "kind", self.kind, SAMPLERS)
        _choice(path, "pi_scheme", self.pi_scheme, PI_SCHEMES)
        _require(path, "n", self.n >= 2, "must be >= 2")
        _require(path, "m", self.m >= 1, "must be >= 1")
        _require(path, "quantile", 0 < self.quantile < 1, "must lie in (0, 1)")
        _require(path, "count", self.count >= 1, "must be >= 1")
        _require(path, "max_rounds", self.max_rounds >= 1, "must be >= 1")
        _require(path, "max_proposals", self.max_proposals >= 1, "must be >= 1")
        _require(path, "diversity_noise", self.diversity_noise > 0, "must be > 0")


@dataclass
class EvaluateConfig:
    seeds: int = 10
    methods: list = field(default_factory=lambda: list(SAMPLERS))
    quantile: float = 0.99
    f1_test_points: int = 2000
    gamma: float = 0.6

    def check(self, path):
        _require(path, "seeds", self.seeds >= 1, "must be >= 1")
        for i, m in enumerate(self.methods):
            _choice(path, f"methods[{i}]", m, SAMPLERS)
        _require(path, "quantile", 0 < self.quantile < 1, "must lie in (0, 1)")
        _require(path, "f1_test_points", self.f1_test_points >= 1, "must be >= 1")
        _require(path, "gamma", 0 < self.gamma < 1, "must lie in (0, 1)")


@dataclass
class Task1Section:
    seeds: int = 10
    train_tasks: int = 50
    test_tasks: int = 100
    eval_every: int = 10
    epsilon: float = 0.3
    gamma: float = 0.6
    max_attempts: int = 20
    learn_budget: int = 120
    learn_seed_points: int = 10
    quantile: float = 0.95
    noise_std: float = 0.01

    def check(self, path):
        _require(path, "seeds", self.seeds >= 1, "must be >= 1")
        _require(path, "train_tasks", self.train_tasks >= 0, "must be >= 0")
        _require(path, "test_tasks", self.test_tasks >= 1, "must be >= 1")
        _require(path, "eval_every", self.eval_every >= 1, "must be >= 1")
        _require(path, "epsilon", 0 <= self.epsilon < 1, "must lie in [0, 1)")
        _require(path, "gamma", 0 < self.gamma < 1, "must lie in (0, 1)")
        _require(path, "max_attempts", self.max_attempts >= 1, "must be >= 1")
        _require(path, "quantile", 0 < self.quantile < 1, "must lie in (0, 1)")


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    task1: Task1Section = field(default_factory=Task1Section)

    def check(self):
        for f in dataclasses.fields(self):
            getattr(self, f.name).check(f.name)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _require(path, name, ok, message):
    if not ok:
        raise ConfigError(f"{path}.{name}", message)


def _choice(path, name, value, options):
    if value not in options:
        raise ConfigError(f"{path}.{name}", f"{value!r} is not one of {', '.join(map(str, options))}")


def _coerce(path: str, tp, value):
    if tp is typing.Union[float, str]:
        if isinstance(value, str):
            return value
        tp = float
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = f"{path}.{f.name}" if path else f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], sub)
        else:
            kwargs[f.name] = _coerce(sub, tp, data[f.name])
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    cfg.check()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return config_from_dict(data)
