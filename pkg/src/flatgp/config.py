"""Experiment configuration and run reports."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .complexity import MEASURES
from .data import SPLIT_RULES
from .sharpness import ADAPTIVITIES, AGGREGATIONS, NOISE_FAMILIES


class ConfigError(ValueError):
    """Raised with every detected configuration problem listed."""


@dataclass
class ExperimentConfig:
    """Full parameterization of one evolutionary run.

    Defaults match the standard setup: population 200 for 100 generations,
    crossover 0.9 / mutation 0.1 / tree addition and deletion 0.5 each,
    perturbation sigma 0.3 over 10 rounds, ridge alpha 0.1.
    """

    data_path: str = ""
    target_column: Optional[str] = None
    split_rule: str = "fixed-100"
    seed: int = 0
    population: int = 200
    generations: int = 100
    sigma: float = 0.3
    rounds: int = 10
    alpha: float = 0.1
    measure: str = "sam"
    aggregation: str = "one_sam"
    m: int = 4
    noise_family: str = "normal"
    adaptivity: str = "instance"
    ensemble_size: int = 1
    cache: bool = True
    cache_capacity: int = 100_000
    label_noise_sigma: float = 0.0
    wcrv_raw_variables: bool = False
    out_dir: Optional[str] = None
    figures: bool = True

    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    tree_add_rate: float = 0.5
    tree_delete_rate: float = 0.5

    def problems(self) -> list[str]:
        issues = []
        if self.split_rule not in SPLIT_RULES:
            issues.append(f"split_rule must be one of {SPLIT_RULES}")
        if self.population < 2 or self.population % 2:
            issues.append("population must be an even number >= 2")
        if self.generations < 1:
            issues.append("generations must be >= 1")
        if self.sigma <= 0:
            issues.append("sigma must be > 0")
        if self.rounds < 1:
            issues.append("rounds must be >= 1")
        if self.alpha <= 0:
            issues.append("alpha must be > 0")
        if self.measure not in MEASURES:
            issues.append(f"measure must be one of {MEASURES}")
        if self.aggregation not in AGGREGATIONS:
            issues.append(f"aggregation must be one of {AGGREGATIONS}")
        if self.m < 1:
            issues.append("m must be >= 1")
        if self.noise_family not in NOISE_FAMILIES:
            issues.append(f"noise_family must be one of {NOISE_FAMILIES}")
        if self.adaptivity not in ADAPTIVITIES:
            issues.append(f"adaptivity must be one of {ADAPTIVITIES}")
        if self.ensemble_size < 1:
            issues.append("ensemble_size must be >= 1")
        if self.cache_capacity < 1:
            issues.append("cache_capacity must be >= 1")
        if self.label_noise_sigma < 0:
            issues.append("label_noise_sigma must be >= 0")
        for rate_name in ("crossover_rate", "mutation_rate", "tree_add_rate", "tree_delete_rate"):
            rate = getattr(self, rate_name)
            if not 0.0 <= rate <= 1.0:
                issues.append(f"{rate_name} must be in [0, 1]")
        return issues

    def validate(self) -> "ExperimentConfig":
        issues = self.problems()
        if issues:
            raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(issues))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        return cls(**data)


@dataclass
class GenerationRecord:
    gen: int
    best_o1: float
    best_o2: float
    archive_score: float
    train_r2: float
    test_r2: float
    seconds: float


@dataclass
class RunReport:
    """Everything one run produced, sufficient to re-plot its evolution."""

    config: ExperimentConfig
    records: list[GenerationRecord]
    split_rule_used: str = ""
    split_fallback: bool = False
    final_train_r2: float = float("nan")
    final_test_r2: float = float("nan")
    final_tree_count: int = 0
    final_node_count: int = 0
    archive_size: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    front: list[tuple[float, float]] = field(default_factory=list)
    bundle: object = None  # ModelBundle, attached by the runner/evolution
