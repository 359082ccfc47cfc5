"""Training/run configuration documents and shipped experiment presets.

A run config is a JSON document with two sections, ``problem`` and ``train``,
covering every data-generation and optimization hyperparameter.  Presets
encode the experiment tables (training-set sizes, batch sizes, Fourier mode
counts, epochs) so that a published row is a single ``--config`` flag away.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .flow import FlowMode
from .problems import ProblemConfig, default_problem_config


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class TrainConfig:
    """Every training hyperparameter in one serializable record."""

    mode: FlowMode = FlowMode.FLORAL
    epochs: int = 300
    batch_size: int = 2
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lr_decay: float = 0.99
    sigma_min: float = 1e-2
    modes_per_axis: int = 64
    hidden_channels: int = 64
    n_layers: int = 4
    train_size: int = 10
    validation_size: int = 0
    resolution: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.lr_decay <= 0:
            raise ConfigError("lr and lr_decay must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.train_size and self.batch_size > self.train_size:
            raise ConfigError("batch_size exceeds train_size")
        if self.sigma_min <= 0:
            raise ConfigError("sigma_min must be positive")

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["mode"] = self.mode.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "mode" in data:
            try:
                data["mode"] = FlowMode(data["mode"])
            except ValueError as exc:
                raise ConfigError(f"unknown mode {data['mode']!r}") from exc
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    train: TrainConfig

    def to_dict(self) -> dict:
        from .dataio import problem_config_to_dict

        return {"problem": problem_config_to_dict(self.problem),
                "train": self.train.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        from .dataio import problem_config_from_dict

        unknown = set(data) - {"problem", "train"}
        if unknown:
            raise ConfigError(f"unknown run config sections: {sorted(unknown)}")
        if "problem" not in data or "train" not in data:
            raise ConfigError("run config needs 'problem' and 'train' sections")
        try:
            problem = problem_config_from_dict(data["problem"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(problem=problem, train=TrainConfig.from_dict(data["train"]))


def load_run_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def save_run_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def _preset(problem: str, **train_kwargs) -> RunConfig:
    return RunConfig(problem=default_problem_config(problem),
                     train=TrainConfig(**train_kwargs))


def _benchmark1_presets() -> dict:
    presets = {}
    batches = {10: 2, 50: 4, 500: 16, 1000: 64}
    for n, b in batches.items():
        presets[f"benchmark1_n{n}"] = _preset(
            "benchmark1", epochs=300, train_size=n, batch_size=b,
            modes_per_axis=64, validation_size=min(n, 200))
    modes = {8: 4, 16: 8, 32: 16, 64: 32}
    for res, m in modes.items():
        presets[f"benchmark1_res{res}"] = _preset(
            "benchmark1", epochs=300, train_size=1000, batch_size=64,
            modes_per_axis=m, resolution=res, validation_size=200)
    return presets


def _pde_presets() -> dict:
    presets = {}
    batches = {500: 16, 1000: 64, 5000: 128}
    for problem in ("advection", "burgers", "darcy"):
        for n, b in batches.items():
            presets[f"{problem}_n{n}"] = _preset(
                problem, epochs=500, train_size=n, batch_size=b,
                modes_per_axis=64, validation_size=min(n, 1000))
    return presets


PRESETS: dict = {**_benchmark1_presets(), **_pde_presets()}


def get_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]
