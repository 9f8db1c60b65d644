"""Run configuration shared by the CLI commands (JSON files, unknown keys rejected)."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import SuiteSizes, TaskConfig
from .errors import ConfigError
from .evaluation import EvalOptions
from .model import ModelConfig
from .trainer import TrainConfig


def _strict(cls, d: dict | None, what: str):
    d = dict(d or {})
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad {what} config: {e}") from None


def default_pretrain() -> TrainConfig:
    return TrainConfig(peak_lr=3e-3, epochs=40, batch_size=32)


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = "runs/data"
    out_dir: str = "runs"
    sizes: SuiteSizes = field(default_factory=SuiteSizes)
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainConfig = field(default_factory=default_pretrain)
    pretrain_dropout: float | None = 0.0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        task = dict(d.get("task") or {})
        if "rs_len" in task:
            task["rs_len"] = tuple(task["rs_len"])
        return cls(
            seed=int(d.get("seed", 0)),
            data_dir=str(d.get("data_dir", cls.data_dir)),
            out_dir=str(d.get("out_dir", cls.out_dir)),
            sizes=_strict(SuiteSizes, d.get("sizes"), "sizes"),
            task=_strict(TaskConfig, task, "task"),
            model=_strict(ModelConfig, d.get("model"), "model"),
            pretrain=_strict(TrainConfig, {**asdict(default_pretrain()), **(d.get("pretrain") or {})}, "pretrain"),
            pretrain_dropout=d.get("pretrain_dropout", 0.0),
            train=_strict(TrainConfig, d.get("train"), "train"),
            eval=_strict(EvalOptions, d.get("eval"), "eval"),
        )

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"]["rs_len"] = list(d["task"]["rs_len"])
        return d

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]
