"""Dataclass configs and their JSON file format.

A pipeline config file is a JSON object with optional sections ``paths``,
``schema``, ``extraction``, ``split``, ``model``, ``train`` and ``eval``;
every key mirrors a field of the dataclass of the same name below. Unknown
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .model import ModelConfig

__all__ = [
    "TrainConfig",
    "ExtractionConfig",
    "SplitConfig",
    "EvalConfig",
    "PathsConfig",
    "PipelineConfig",
    "ConfigError",
    "load_config",
]

LOSS_MODES = ("unified", "infonce-ce")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    w: tuple[float, float, float] = (0.6, 0.2, 0.2)
    lam: float = 0.6
    lr: float = 0.005
    batch_size: int = 512
    p_mask: float = 0.2
    patience: int | None = None  # None: 200 with the sequence task, else 50
    max_epochs: int = 1000
    seed: int = 0
    loss_mode: str = "unified"
    infonce_tau: float = 0.07  # only used by loss_mode="infonce-ce"
    seqs_per_step: int | None = None  # None: batch_size // 4
    stop_grad_targets: bool = False
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if len(self.w) != 3 or any(wi <= 0 for wi in self.w):
            raise ConfigError(f"task weights must be three positive numbers, got {self.w}")
        if self.lam <= 0:
            raise ConfigError("lam must be > 0")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("lr, batch_size and max_epochs must be positive")
        if not 0 < self.p_mask < 1:
            raise ConfigError("p_mask must be in (0, 1)")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.infonce_tau <= 0:
            raise ConfigError("infonce_tau must be > 0")
        if self.patience is not None and self.patience < 0:
            raise ConfigError("patience must be >= 0")

    def effective_patience(self, sequence_task: bool) -> int:
        if self.patience is not None:
            return self.patience
        return 200 if sequence_task else 50

    @property
    def effective_seqs_per_step(self) -> int:
        return self.seqs_per_step or max(1, self.batch_size // 4)


@dataclass(frozen=True)
class ExtractionConfig:
    short_fields: tuple[str, ...] = ("brand", "categories")
    long_fields: tuple[str, ...] | None = ("title", "description")
    review_window: int = 5
    term_min_items: int = 5
    term_max_item_frac: float = 0.5
    reviews_per_item: int = 100


@dataclass(frozen=True)
class SplitConfig:
    min_user_inter: int = 20
    min_item_inter: int = 20
    min_attrs: int = 5
    split_ratio: float = 0.9
    val_frac: float = 0.05
    val_mode: str = "time"
    max_seq_len: int = 100


@dataclass(frozen=True)
class EvalConfig:
    ns: tuple[int, ...] = (5, 20, 40)
    significance: float = 0.01
    n_permutations: int = 10_000
    max_pairs: int = 50_000


@dataclass(frozen=True)
class PathsConfig:
    items: str = ""
    interactions: str = ""
    positive_lexicon: str | None = None
    negative_lexicon: str | None = None
    workdir: str = "work"


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    schema: Mapping[str, str] = field(default_factory=dict)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    encoder: str = "hash"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "PipelineConfig":
        return dataclasses.replace(self, **sections)


def _build(cls, data: Mapping[str, Any] | None, section: str):
    data = dict(data or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(v)
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"[{section}]: {e}") from e


def config_from_dict(d: Mapping[str, Any]) -> PipelineConfig:
    sections = {"paths": PathsConfig, "extraction": ExtractionConfig, "split": SplitConfig,
                "model": ModelConfig, "train": TrainConfig, "eval": EvalConfig}
    unknown = set(d) - set(sections) - {"schema", "encoder"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs: dict[str, Any] = {name: _build(cls, d.get(name), name) for name, cls in sections.items()}
    kwargs["schema"] = dict(d.get("schema") or {})
    kwargs["encoder"] = d.get("encoder", "hash")
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    """Load a JSON config; relative data paths resolve against the file's directory."""
    p = Path(path)
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    paths = dict(d.get("paths") or {})
    for key in ("items", "interactions", "positive_lexicon", "negative_lexicon", "workdir"):
        if paths.get(key) and not Path(paths[key]).is_absolute():
            paths[key] = str((p.parent / paths[key]).resolve())
    d["paths"] = paths
    enc = d.get("encoder", "hash")
    if enc.startswith("precomputed:") and not Path(enc.split(":", 1)[1]).is_absolute():
        d["encoder"] = "precomputed:" + str((p.parent / enc.split(":", 1)[1]).resolve())
    return config_from_dict(d)
