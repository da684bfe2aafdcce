"""Run configuration: model shape, optimizer schedule and data handling."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

__all__ = ["ABLATIONS", "UnknownMode", "ModelConfig", "TrainConfig", "RunConfig", "load_config"]

ABLATIONS = ("no-taylor", "no-tree-pe", "no-var-res")


class UnknownMode(ValueError):
    pass


def check_ablations(modes) -> tuple[str, ...]:
    modes = tuple(sorted(set(modes)))
    for m in modes:
        if m not in ABLATIONS:
            raise UnknownMode(f"unknown ablation {m!r}; expected one of {ABLATIONS}")
    return modes


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 256
    layers: int = 6
    heads: int = 8
    qk_dim: int = 16
    v_dim: int = 32
    ffn_dim: int = 1024
    dropout: float = 0.1
    ref_dropout: float = 0.1
    ablations: tuple[str, ...] = ()
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("dim", "layers", "heads", "qk_dim", "v_dim", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("dropout", "ref_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        object.__setattr__(self, "ablations", check_ablations(self.ablations))

    @property
    def emb_dim(self) -> int:
        # embeddings live in the positional-encoding dimension, expanded later
        return self.qk_dim


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    warmup_epochs: float = 3
    peak_lr: float = 5e-4
    final_lr: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-2
    files_per_batch: int = 1
    holes_per_batch: int = 32
    max_steps: int | None = None
    eval_every: int = 1


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data"
    cache: str = "corpus.ndjson"
    checkpoint_dir: str = "checkpoints"
    split_ratio: float = 0.85
    split_seed: int = 0
    reduction: tuple[str, ...] = ("original",)
    max_tokens: int = 2 ** 14
    repetitions: int = 4
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        d = dict(d)
        model = ModelConfig(**{k: tuple(v) if k == "ablations" else v
                               for k, v in d.pop("model", {}).items()})
        train = TrainConfig(**d.pop("train", {}))
        if "reduction" in d:
            d["reduction"] = tuple(d["reduction"])
        return cls(model=model, train=train, **d)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))
