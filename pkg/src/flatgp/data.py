"""Dataset ingestion, splitting, label-noise injection and standardization."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

SPLIT_RULES = ("fixed-100", "ratio-50-50", "ratio-80-20")


class IngestionError(ValueError):
    """Raised when a CSV file cannot be turned into a numeric dataset."""


@dataclass
class Dataset:
    """Numeric regression data: feature matrix, target vector, column names."""

    features: np.ndarray  # (n_instances, n_vars) float64
    target: np.ndarray  # (n_instances,) float64
    names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.features.shape[0] != self.target.shape[0]:
            raise ValueError("features and target row counts differ")
        if self.features.shape[1] < 1:
            raise ValueError("need at least one feature column")
        if len(self.names) != self.features.shape[1]:
            raise ValueError("one name per feature column required")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_vars(self) -> int:
        return self.features.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.target[idx], list(self.names))


@dataclass
class StandardizationStats:
    """Per-column means and stddevs; constant columns record stddev 1."""

    means: np.ndarray
    stds: np.ndarray

    def apply(self, M: np.ndarray) -> np.ndarray:
        return (M - self.means) / self.stds

    def invert(self, M: np.ndarray) -> np.ndarray:
        return M * self.stds + self.means


def column_stats(M: np.ndarray) -> StandardizationStats:
    M = np.asarray(M, dtype=np.float64)
    means = M.mean(axis=0)
    stds = M.std(axis=0)
    stds = np.where(stds > 0.0, stds, 1.0)
    return StandardizationStats(means, stds)


@dataclass
class SplitSpec:
    """How to carve train/test partitions out of one dataset."""

    train_size_rule: str = "fixed-100"
    seed: int = 0
    label_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.train_size_rule not in SPLIT_RULES:
            raise ValueError(
                f"unknown split rule {self.train_size_rule!r}; "
                f"expected one of {SPLIT_RULES}"
            )
        if self.label_noise_sigma < 0:
            raise ValueError("label_noise_sigma must be >= 0")


def load_csv(path: str, target_column: Optional[str] = None) -> Dataset:
    """Read a comma-delimited numeric table with a header row.

    The target defaults to the last column and can be overridden by name.
    Parse failures report the offending file row (header = row 1) and column.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(rows) < 2:
        raise IngestionError(f"{path}: no data rows after header")
    if len(header) < 2:
        raise IngestionError(f"{path}: need at least one feature and a target")
    if target_column is None:
        target_idx = len(header) - 1
    else:
        if target_column not in header:
            raise IngestionError(
                f"{path}: target column {target_column!r} not in header {header}"
            )
        target_idx = header.index(target_column)

    n_cols = len(header)
    values = np.empty((len(rows) - 1, n_cols), dtype=np.float64)
    for r, row in enumerate(rows[1:], start=2):  # row numbers as in the file
        if len(row) != n_cols:
            raise IngestionError(
                f"{path}: row {r} has {len(row)} cells, expected {n_cols}"
            )
        for c, cell in enumerate(row):
            try:
                values[r - 2, c] = float(cell)
            except ValueError as exc:
                raise IngestionError(
                    f"{path}: non-numeric value {cell!r} at row {r}, "
                    f"column {header[c]!r}"
                ) from exc
    feature_idx = [c for c in range(n_cols) if c != target_idx]
    return Dataset(
        features=values[:, feature_idx],
        target=values[:, target_idx],
        names=[header[c] for c in feature_idx],
    )


def effective_split_rule(n_instances: int, rule: str) -> str:
    """Resolve the fixed-100 fallback: small datasets split 50:50 instead."""
    if rule == "fixed-100" and n_instances < 200:
        return "ratio-50-50"
    return rule


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic disjoint train/test partition covering the dataset."""
    n = dataset.n_instances
    if n < 2:
        raise ValueError("need at least 2 instances to split")
    rule = effective_split_rule(n, spec.train_size_rule)
    if rule != spec.train_size_rule:
        warnings.warn(
            f"fixed-100 needs n >= 200 but n = {n}; falling back to 50:50",
            stacklevel=2,
        )
    if rule == "fixed-100":
        train_n = 100
    elif rule == "ratio-50-50":
        train_n = n // 2
    else:  # ratio-80-20
        train_n = int(round(0.8 * n))
        train_n = min(max(train_n, 1), n - 1)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return dataset.take(np.sort(perm[:train_n])), dataset.take(np.sort(perm[train_n:]))


def inject_label_noise(train: Dataset, sigma: float, seed: int) -> Dataset:
    """Add independent N(0, sigma^2) noise to the targets; features untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return Dataset(train.features.copy(), train.target.copy(), list(train.names))
    noise = np.random.default_rng(seed).normal(0.0, sigma, train.n_instances)
    return Dataset(train.features.copy(), train.target + noise, list(train.names))


def standardize(
    train: Dataset, test: Dataset
) -> tuple[Dataset, Dataset, StandardizationStats]:
    """Z-score feature columns by train statistics only; targets untouched."""
    if train.n_instances < 1:
        raise ValueError("train set is empty")
    stats = column_stats(train.features)
    train_std = Dataset(stats.apply(train.features), train.target.copy(), list(train.names))
    test_std = Dataset(stats.apply(test.features), test.target.copy(), list(test.names))
    return train_std, test_std, stats
