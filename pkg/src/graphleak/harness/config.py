"""Declarative experiment configuration (YAML or JSON)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..graphs import PROPERTIES
from ..models import POOLINGS
from ..sampling import METHODS
from ..subgraph_attack import STRATEGIES

ATTACKS = ("property", "subgraph", "reconstruct")


@dataclass
class TrainingConfig:
    target_epochs: int = 100
    target_patience: int = 10
    target_lr: float = 1e-3
    target_batch_size: int = 32
    property_epochs: int = 200
    subgraph_epochs: int = 30
    recon_epochs: int = 10
    finetune_epochs: int = 10
    hidden_dim: int = 192


@dataclass
class SamplerConfig:
    method: str = "random_walk"
    ratio: float = 0.8


@dataclass
class TransferConfig:
    samplers: list[str] = field(default_factory=list)
    models: list[str] = field(default_factory=list)
    datasets: list[list[str]] = field(default_factory=list)
    ratio: float = 0.8


@dataclass
class DefenseConfig:
    betas: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0])
    property_name: str = "density"
    k: int = 2
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    datasets: list[str] = field(default_factory=list)
    poolings: list[str] = field(default_factory=list)
    reconstruct: bool = False


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset_root: str = "data"
    datasets: list[str] = field(default_factory=list)
    poolings: list[str] = field(default_factory=lambda: ["mean", "diffpool", "mincut"])
    attacks: list[str] = field(default_factory=lambda: list(ATTACKS))
    k_list: list[int] = field(default_factory=lambda: [2, 4, 6, 8])
    properties: list[str] = field(default_factory=lambda: list(PROPERTIES))
    samplers: list[SamplerConfig] = field(default_factory=lambda: [SamplerConfig()])
    strategies: list[str] = field(default_factory=lambda: ["difference"])
    subgraph_baseline: bool = True
    # train a property head even when every auxiliary graph falls in one bucket
    property_skip_single_class: bool = True
    recon_max_nodes: int | None = 40
    degree_features: bool = False
    runs: int = 5
    seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    defense: DefenseConfig | None = None

    def validate(self) -> "ExperimentConfig":
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        for p in self.poolings:
            if p not in POOLINGS:
                raise ValueError(f"unknown pooling {p!r}; expected one of {POOLINGS}")
        for a in self.attacks:
            if a not in ATTACKS:
                raise ValueError(f"unknown attack {a!r}; expected one of {ATTACKS}")
        for p in self.properties:
            if p not in PROPERTIES:
                raise ValueError(f"unknown property {p!r}")
        for s in self.samplers:
            if s.method not in METHODS:
                raise ValueError(f"unknown sampler {s.method!r}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for m in self.transfer.models:
            if m not in POOLINGS:
                raise ValueError(f"unknown transfer model {m!r}")
        for s in self.transfer.samplers:
            if s not in METHODS:
                raise ValueError(f"unknown transfer sampler {s!r}")
        for pair in self.transfer.datasets:
            if len(pair) != 2:
                raise ValueError(f"dataset transfer entries are [source, target] pairs, got {pair!r}")
        if any(k < 2 for k in self.k_list):
            raise ValueError("bucket counts must be at least 2")
        if self.defense is not None:
            d = self.defense
            if any(b < 0 for b in d.betas):
                raise ValueError("defense betas must be non-negative")
            if d.property_name not in PROPERTIES:
                raise ValueError(f"unknown defense property {d.property_name!r}")
            for p in d.poolings:
                if p not in POOLINGS:
                    raise ValueError(f"unknown defense pooling {p!r}")
            if d.sampler.method not in METHODS:
                raise ValueError(f"unknown defense sampler {d.sampler.method!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "training" in raw:
            raw["training"] = TrainingConfig(**raw["training"])
        if "samplers" in raw:
            raw["samplers"] = [SamplerConfig(**s) for s in raw["samplers"]]
        if "transfer" in raw:
            raw["transfer"] = TransferConfig(**raw["transfer"])
        if raw.get("defense") is not None:
            d = dict(raw["defense"])
            if "sampler" in d:
                d["sampler"] = SamplerConfig(**d["sampler"])
            raw["defense"] = DefenseConfig(**d)
        return cls(**raw).validate()


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    text = Path(path).read_text()
    raw = yaml.safe_load(text) if str(path).endswith((".yml", ".yaml")) else json.loads(text)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(raw)
