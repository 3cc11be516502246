"""Paired statistical comparison used by the measure-comparison report."""

from __future__ import annotations

import numpy as np
from scipy.stats import wilcoxon as _scipy_wilcoxon


def wilcoxon_signed_rank(a, b) -> tuple[float, float]:
    """Two-sided paired Wilcoxon test; returns (statistic, p-value).

    Zero differences are dropped. All-zero differences (identical samples)
    are a guaranteed tie: statistic 0, p-value 1. The exact distribution is
    used for up to 25 informative pairs without rank ties, the normal
    approximation otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    if diffs.size == 0:
        return 0.0, 1.0
    ranks = np.abs(diffs)
    has_ties = np.unique(ranks).size < ranks.size
    method = "exact" if diffs.size <= 25 and not has_ties else "approx"
    res = _scipy_wilcoxon(diffs, method=method)
    return float(res.statistic), float(res.pvalue)


def compare_outcome(a, b, alpha: float = 0.05) -> str:
    """'+' when a is significantly higher than b, '-' when lower, '~' else."""
    _, p = wilcoxon_signed_rank(a, b)
    if p >= alpha:
        return "~"
    med = float(np.median(np.asarray(a) - np.asarray(b)))
    if med == 0.0:
        med = float(np.mean(np.asarray(a) - np.asarray(b)))
    return "+" if med > 0 else "-"
