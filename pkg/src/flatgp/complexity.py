"""Baseline complexity objectives: pp, tk, gc, rc, wcrv and iodc.

Each measure produces a finite value to minimize alongside the
cross-validation loss, plugged into the same evolutionary loop.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from . import ridge
from .trees import Individual

MEASURES = ("sam", "pp", "tk", "gc", "rc", "wcrv", "iodc", "none")


def pp(ind: Individual) -> int:
    """Parsimony pressure: total node count across all trees."""
    return ind.node_count()


def tk(model: ridge.FittedRidgeModel, phi: np.ndarray) -> float:
    """Zero-order Tikhonov: mean squared model output on the centered scale."""
    pred = model.predict_centered(phi)
    return float(np.mean(pred**2))


def gc_ranks(pp_values: Sequence[float], tk_values: Sequence[float]) -> np.ndarray:
    """Dominance rank of each (pp, tk) pair; rank 0 = nondominated."""
    pairs = np.column_stack([pp_values, tk_values]).astype(np.float64)
    n = len(pairs)
    ranks = np.full(n, -1, dtype=np.int64)
    remaining = np.arange(n)
    rank = 0
    while remaining.size:
        front = []
        for i in remaining:
            dominated = False
            for j in remaining:
                if j == i:
                    continue
                if (
                    pairs[j, 0] <= pairs[i, 0]
                    and pairs[j, 1] <= pairs[i, 1]
                    and (pairs[j, 0] < pairs[i, 0] or pairs[j, 1] < pairs[i, 1])
                ):
                    dominated = True
                    break
            if not dominated:
                front.append(i)
        ranks[front] = rank
        remaining = np.array([i for i in remaining if ranks[i] < 0], dtype=np.int64)
        rank += 1
    return ranks


def rc(phi: np.ndarray, Y: np.ndarray, alpha: float, zeta: np.ndarray) -> float:
    """Capacity estimate: refit to sign-flipped targets, correlate the losses.

    The model is refitted to -zeta_i * y_i; with squared loss the per-instance
    losses l_i = (f(x_i) - y_i)^2 are then pushed toward (2 y_i)^2 where
    zeta_i = +1 and toward 0 where zeta_i = -1, and the estimate is
    mean(zeta_i * l_i).
    """
    Y = np.asarray(Y, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    flipped = ridge.fit(phi, -zeta * Y, alpha)
    losses = (flipped.predict(phi) - Y) ** 2
    return float(np.mean(zeta * losses))


def approx_mic(x: np.ndarray, y: np.ndarray) -> float:
    """Grid-based stand-in for the maximal information coefficient.

    Normalized mutual information over an equal-frequency B x B grid with
    B = ceil(n^0.3) capped at 8. Constant inputs score 0; the value lies in
    [0, 1] with 1 reached by a noiseless monotone relationship.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 2 or np.std(x) == 0 or np.std(y) == 0:
        return 0.0
    b = min(8, int(np.ceil(n**0.3)))
    if b < 2:
        return 0.0
    xb = _equal_frequency_bins(x, b)
    yb = _equal_frequency_bins(y, b)
    counts = np.zeros((b, b))
    np.add.at(counts, (xb, yb), 1.0)
    p = counts / n
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    mi = float(np.sum(p[mask] * np.log(p[mask] / (px @ py)[mask])))
    return float(np.clip(mi / np.log(b), 0.0, 1.0))


def _equal_frequency_bins(v: np.ndarray, b: int) -> np.ndarray:
    edges = np.quantile(v, np.linspace(0.0, 1.0, b + 1)[1:-1])
    return np.searchsorted(edges, v, side="right")


def wcrv(
    phi: np.ndarray,
    Y: np.ndarray,
    residuals: np.ndarray,
    mic_fn: Callable[[np.ndarray, np.ndarray], float] = approx_mic,
) -> float:
    """Weighted dependence between variables, target and residuals.

    Variables whose dependence with the target reaches the median value
    contribute mic(v, Y) * mic(v, R); the rest contribute 1 - mic(v, Y).
    ``mic_fn`` is a seam so an exact estimator can be swapped in.
    """
    phi = np.asarray(phi, dtype=np.float64)
    mic_y = np.array([mic_fn(phi[:, j], Y) for j in range(phi.shape[1])])
    mv = float(np.median(mic_y))
    total = 0.0
    for j in range(phi.shape[1]):
        if mic_y[j] >= mv:
            total += mic_y[j] * mic_fn(phi[:, j], residuals)
        else:
            total += 1.0 - mic_y[j]
    return float(total)


def iodc(X: np.ndarray, y_hat: np.ndarray) -> float:
    """Pearson correlation between pairwise input and output distances.

    High correlation indicates a smoother map, so the evolutionary objective
    uses the negation. Degenerate distance matrices (zero variance on either
    side) score 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    d_in = pdist(X)
    d_out = pdist(y_hat[:, None])
    if d_in.size == 0 or np.std(d_in) == 0 or np.std(d_out) == 0:
        return 0.0
    return float(np.corrcoef(d_in, d_out)[0, 1])


def draw_zeta(rng: np.random.Generator, n: int) -> np.ndarray:
    """Rademacher vector of +-1, one fresh draw per generation."""
    return rng.integers(0, 2, n) * 2 - 1
