"""Experiment configuration: nested dataclasses mirrored one-to-one by the JSON config file."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import ClassifierConfig
from .errors import ConfigError
from .memory import STRATEGIES
from .models import GenerationCounts, TrainConfig


@dataclass
class SyntheticSpec:
    num_classes: int = 20
    samples_per_class: int = 50
    d_x: int = 32
    d_a: int = 16
    cluster_spread: float = 1.0
    seed: int = 0


@dataclass
class DatasetConfig:
    path: str | None = None
    synthetic: SyntheticSpec | None = None


@dataclass
class MemoryConfig:
    strategy: str = "reservoir"
    samples_per_class: int = 3
    # reservoir only; defaults to samples_per_class * num_classes
    mem_size: int | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=lambda: DatasetConfig(synthetic=SyntheticSpec()))
    setting: int = 1
    model: str = "cada"
    num_tasks: int = 5
    test_fraction: float = 0.2
    split_seed: int = 0
    # setting 2: explicit unseen classes of the standard split, else a seeded fraction
    unseen_classes: list[int] | None = None
    unseen_fraction: float = 0.25
    latent_dim: int = 16
    encoder_hidden: list[int] = field(default_factory=lambda: [64])
    decoder_hidden: list[int] = field(default_factory=lambda: [64])
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    generation: GenerationCounts = field(default_factory=GenerationCounts)
    output_dir: str | None = None
    label: str = ""

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if self.setting not in (1, 2):
            raise ConfigError(f"setting must be 1 or 2, got {self.setting}")
        if self.model not in ("cada", "cvae"):
            raise ConfigError(f"model must be 'cada' or 'cvae', got {self.model!r}")
        if self.memory.strategy not in STRATEGIES + ("none",):
            raise ConfigError(f"unknown memory strategy {self.memory.strategy!r}")
        if self.memory.strategy == "none" and self.train.replay_enabled:
            raise ConfigError("memory strategy 'none' requires train.replay_enabled = false")
        if self.memory.samples_per_class < 1:
            raise ConfigError("memory.samples_per_class must be >= 1")
        if self.num_tasks < 1 or self.latent_dim < 1:
            raise ConfigError("num_tasks and latent_dim must be positive")
        if not 0 < self.test_fraction < 1 or not 0 < self.unseen_fraction < 1:
            raise ConfigError("fractions must lie in (0, 1)")
        ds = self.dataset
        if (ds.path is None) == (ds.synthetic is None):
            raise ConfigError("dataset needs exactly one of 'path' or 'synthetic'")
        if check_paths and ds.path is not None and not Path(ds.path).is_dir():
            raise ConfigError(f"dataset path {ds.path} does not exist")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        """Digest of everything that influences results (``output_dir`` and ``label`` excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("label")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return _build(cls, d).validate(check_paths=False)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        cfg = cls.from_dict(raw)
        if cfg.dataset.path is not None and not Path(cfg.dataset.path).is_absolute():
            cfg.dataset.path = str((path.parent / cfg.dataset.path).resolve())
        return cfg.validate()


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "memory"): MemoryConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "classifier"): ClassifierConfig,
    (ExperimentConfig, "generation"): GenerationCounts,
    (DatasetConfig, "synthetic"): SyntheticSpec,
}


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for key, value in d.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value) if sub is not None and value is not None else value
    return cls(**kwargs)
