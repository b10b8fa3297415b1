"""Experiment configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .model import ACTIVATIONS
from .sampling import MODES, NORM_MODES


# Default synthetic dataset: homophilous groups, group-correlated features
# and a modest base-rate gap, large enough for stable fairness metrics.
BIASED_SYNTHETIC = {
    "n": 2000,
    "avg_degree": 10.0,
    "group_homophily": 0.9,
    "label_homophily": 0.5,
    "positive_rates": [0.5, 0.4],
    "label_signal": 1.0,
    "group_signal": 0.6,
    "bridge_fraction": 0.2,
    "degree_spread": 0.6,
    "seed": 0,
}


@dataclass
class DatasetConfig:
    edges: str | None = None
    nodes: str | None = None
    # keyword arguments for graph.generate_biased; used when no paths are given
    synthetic: dict = field(default_factory=lambda: dict(BIASED_SYNTHETIC))
    split: tuple = (0.5, 0.25, 0.25)
    split_seed: int = 0


@dataclass
class ModelConfig:
    layers: int = 2
    hidden: int = 128
    activation: str = "relu"
    norm_mode: str = "row"
    mlp: bool = False


@dataclass
class TrainerConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 1000
    # sampled neighborhoods whose predictions are averaged at evaluation
    eval_samples: int = 1
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class SamplerConfig:
    modes: list = field(default_factory=lambda: ["none", "uniform", "degree", "bemap"])
    beta: float = 0.25
    delta: float = 1.0
    hops: int = 2


@dataclass
class TheoryConfig:
    lemma1_instances: int = 20
    lemma1_n: int = 10
    lemma1_hops: int = 2
    lemma1_tol: float = 1e-8
    theorem1_n: int = 200
    theorem1_p: float = 0.05
    theorem1_trials: int = 1000
    theorem1_rel_tol: float = 0.05
    lemma3_n: int = 5000
    lemma3_trials: int = 20
    lemma3_size: int = 4
    z_max: float = 3.0
    dim: int = 8
    seed: int = 0


@dataclass
class ProbeConfig:
    epochs: int = 300
    layer: int = 1


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    outputs: str = "runs"

    def validate(self) -> "ExperimentConfig":
        m, t, s = self.model, self.trainer, self.sampler
        if m.layers < 1 or m.hidden < 1:
            raise ValidationError("model.layers and model.hidden must be positive")
        if m.activation not in ACTIVATIONS:
            raise ValidationError(f"model.activation must be one of {ACTIVATIONS}")
        if m.norm_mode not in NORM_MODES:
            raise ValidationError(f"model.norm_mode must be one of {NORM_MODES}")
        if not t.seeds:
            raise ValidationError("trainer.seeds must list at least one seed")
        if t.eval_samples < 1:
            raise ValidationError("trainer.eval_samples must be >= 1")
        if t.epochs < 1 or t.lr <= 0 or t.weight_decay < 0:
            raise ValidationError("trainer.epochs and trainer.lr must be positive, weight_decay non-negative")
        if not s.modes or any(mode not in MODES for mode in s.modes):
            raise ValidationError(f"sampler.modes must be a non-empty subset of {MODES}")
        if not 0 < s.beta <= 1 or s.delta <= 0 or s.hops < 1:
            raise ValidationError("sampler needs 0 < beta <= 1, delta > 0, hops >= 1")
        d = self.dataset
        if (d.edges is None) != (d.nodes is None):
            raise ValidationError("dataset.edges and dataset.nodes must be given together")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def experiment_dict(self) -> dict:
        """Everything that affects results; the output location is left out."""
        data = self.to_dict()
        del data["outputs"]
        return data

    def digest(self) -> str:
        blob = json.dumps(self.experiment_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValidationError(f"config section {path or '<root>'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValidationError(f"unknown config key {path + key!r}")
        sub = _SECTIONS.get(key) if cls is ExperimentConfig else None
        if sub is not None:
            kwargs[key] = _build(sub, value, f"{key}.")
        elif key == "split":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "trainer": TrainerConfig,
    "sampler": SamplerConfig,
    "theory": TheoryConfig,
    "probe": ProbeConfig,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)
