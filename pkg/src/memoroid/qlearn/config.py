"""Experiment configuration: one flat YAML mapping per experiment."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..models import MODEL_KINDS
from .envs import TASKS

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    task: str = "repeat_previous"
    k: int = 1
    episode_length: int = 16
    n_cards: int = 4
    model: str = "lru"
    batching: str = "tbb"
    segment_length: int | None = None
    batch_size: int = 256
    gamma: float = 0.5
    beta: float = 0.995
    seeds: list[int] = field(default_factory=lambda: [0])
    epochs_random: int = 100
    epochs_train: int = 2000
    updates_per_epoch: int = 1
    capacity: int = 100_000
    lr: float = 1e-3
    warmup: int = 200
    grad_clip: float | None = 1.0
    hidden: int = 32
    memory: int = 16
    context: int = 4
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_fraction: float = 0.5
    eval_interval: int = 100
    eval_episodes: int = 16
    terminal_mask: bool = True
    next_state: str = "literal"
    dtype: str = "float32"
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def require(name, ok, msg):
            if not ok:
                raise ConfigError(name, msg)

        require("task", self.task in TASKS, f"must be one of {TASKS}, got {self.task!r}")
        require("model", self.model in MODEL_KINDS, f"must be one of {MODEL_KINDS}, got {self.model!r}")
        require("batching", self.batching in ("tbb", "sbb"), f"must be 'tbb' or 'sbb', got {self.batching!r}")
        if self.batching == "sbb":
            require("segment_length", isinstance(self.segment_length, int) and self.segment_length >= 1,
                    "sbb requires an integer segment_length >= 1")
        require("seeds", isinstance(self.seeds, list) and len(self.seeds) > 0
                and all(isinstance(s, int) for s in self.seeds), "must be a non-empty list of integers")
        for name in ("k", "episode_length", "n_cards", "batch_size", "capacity", "hidden", "memory",
                     "context", "eval_interval", "eval_episodes"):
            v = getattr(self, name)
            require(name, isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"must be a positive integer, got {v!r}")
        for name in ("epochs_random", "epochs_train", "updates_per_epoch", "warmup"):
            v = getattr(self, name)
            require(name, isinstance(v, int) and not isinstance(v, bool) and v >= 0, f"must be a non-negative integer, got {v!r}")
        for name in ("gamma", "beta", "eps_start", "eps_end", "eps_anneal_fraction"):
            v = getattr(self, name)
            require(name, isinstance(v, (int, float)) and 0.0 <= v <= 1.0, f"must lie in [0, 1], got {v!r}")
        require("lr", isinstance(self.lr, (int, float)) and self.lr > 0, "must be positive")
        require("grad_clip", self.grad_clip is None or (isinstance(self.grad_clip, (int, float)) and self.grad_clip > 0),
                "must be positive or null")
        require("next_state", self.next_state in ("literal", "shifted"), "must be 'literal' or 'shifted'")
        require("dtype", self.dtype in ("float32", "float64"), "must be 'float32' or 'float64'")
        require("terminal_mask", isinstance(self.terminal_mask, bool), "must be a boolean")
        if self.task == "repeat_previous":
            require("episode_length", self.episode_length > self.k, "must exceed k for repeat_previous")
        require("capacity", self.capacity >= self.episode_length, "must hold at least one episode")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a flat key-value mapping")
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(str(key), "unknown field")
            if isinstance(value, dict):
                raise ConfigError(str(key), "nested mappings are not allowed; keys are flat")
        return cls(**data)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)
