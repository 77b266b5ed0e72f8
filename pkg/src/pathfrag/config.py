"""Declarative run configuration: YAML file + dotted-key overrides.

Unknown keys are rejected, and every validation failure in a file is
reported at once. The fully resolved mapping (file + overrides) is embedded
in written artifacts so runs can be reproduced bit-for-bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .model import ModelConfig
from .objective import LossConfig
from .synth import GeneratorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    algorithm: str = "hdbscan"
    n_clusters: int = 5
    linkage: str = "ward"
    min_cluster_size: int = 5
    min_samples: Optional[int] = None
    grid_search: bool = False
    grid_max_k: int = 8
    grid_metric: str = "silhouette"


@dataclass(frozen=True)
class InferConfig:
    threshold: float = 0.2
    tfidf_variable: int = 0


@dataclass(frozen=True)
class EvalConfig:
    num_vertices: tuple = (3, 5, 7, 9)
    support_size: tuple = (100, 1000)
    zipf_a: tuple = (1.5, 2.0, 3.0, 4.0)
    num_variables: tuple = (1, 2)
    seeds: tuple = (0, 1, 2)
    methods: tuple = ("defrag_stlo", "pca_cluster", "random")
    pca_dims: int = 8
    edge_threshold: float = 0.2
    ged_timeout: float = 60.0
    cluster_grid_max_k: int = 8
    cluster_metric: str = "silhouette"
    defrag_cluster: str = "hdbscan"
    min_cluster_divisor: int = 20
    pca_select: str = "grid"


@dataclass(frozen=True)
class IoConfig:
    out_dir: str = "out"


_SECTIONS = {
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "cluster": ClusterConfig,
    "infer": InferConfig,
    "eval": EvalConfig,
    "io": IoConfig,
}


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    io: IoConfig = field(default_factory=IoConfig)
    resolved: dict = field(default_factory=dict)  # file + overrides, for artifacts


def _coerce(value: Any, target_type: Any) -> Any:
    if isinstance(value, list):
        return tuple(value)
    return value


def _build_section(cls, mapping: dict, section: str, problems: list[str]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in known:
            problems.append(f"{section}.{key}: unknown key")
            continue
        kwargs[key] = _coerce(value, known[key].type)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
        return cls()


def config_from_mapping(mapping: dict) -> RunConfig:
    problems: list[str] = []
    sections: dict[str, Any] = {}
    for key, value in (mapping or {}).items():
        if key not in _SECTIONS:
            problems.append(f"{key}: unknown section (expected one of {sorted(_SECTIONS)})")
            continue
        if not isinstance(value, dict):
            problems.append(f"{key}: section must be a mapping")
            continue
        sections[key] = _build_section(_SECTIONS[key], value, key, problems)
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return RunConfig(**sections, resolved=mapping or {})


def apply_overrides(mapping: dict, overrides: list[str]) -> dict:
    """Apply repeatable ``--set section.key=value`` overrides (YAML-parsed values)."""
    result = {k: (dict(v) if isinstance(v, dict) else v) for k, v in (mapping or {}).items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section, key = parts
        result.setdefault(section, {})[key] = yaml.safe_load(raw)
    return result


def load_config(path: Path | str, overrides: Optional[list[str]] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    mapping = yaml.safe_load(path.read_text()) or {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"config root must be a mapping, got {type(mapping).__name__}")
    mapping = apply_overrides(mapping, overrides or [])
    return config_from_mapping(mapping)
