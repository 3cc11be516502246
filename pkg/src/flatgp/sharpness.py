"""Semantic perturbation and sharpness estimation for feature trees.

Sharpness of a feature set is the worst observed increase in squared
prediction error when the semantics of every subtree (terminals included)
are randomly perturbed. For each of K rounds, every node output psi is
replaced bottom-up by a noisy version before being fed to its parent:

    instance adaptivity:  psi + psi * sigma * eps      (noise scales with the
                                                        per-instance magnitude)
    batch adaptivity:     psi + std(psi) * sigma * eps (one scale per node)
    no adaptivity:        psi + sigma * eps

where eps is unit noise from the configured family. Per instance i the
sharpness S_i starts at zero and tracks the running maximum of

    (perturbed_prediction_i - y_i)^2 - (prediction_i - y_i)^2

over rounds; aggregation modes then reduce the K x n difference tensor to a
single objective value.

Noise is a pure function of (round seed, tree structure, node position), so
an identical tree in any individual receives the identical perturbation.
That makes the per-round LRU cache sound: a hit returns bit-for-bit the same
vector a fresh computation would produce.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from .ridge import FittedRidgeModel
from .trees import CLAMP, PRIMITIVES, FeatureTree, evaluate_tree

NOISE_FAMILIES = ("normal", "uniform", "laplace", "ensemble")
ADAPTIVITIES = ("instance", "batch", "none")
AGGREGATIONS = ("one_sam", "m_sam", "n_sam", "gmp")

_MASK64 = (1 << 64) - 1
_FAMILY_TAG = 0xC0FFEE  # spawn tag for the per-round family pick
_ROUNDS_TAG = 0x5EED01  # spawn tag for deriving round seeds
_BATCH_TAG = 0x5EED02  # spawn tag for m-sharpness grouping


@dataclass
class PerturbationConfig:
    """Knobs of the perturbation process; defaults follow the standard setup."""

    sigma: float = 0.3
    rounds: int = 10
    noise_family: str = "normal"
    adaptivity: str = "instance"
    aggregation: str = "one_sam"
    m: int = 4  # mini-batch size for m_sam

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.noise_family not in NOISE_FAMILIES:
            raise ValueError(f"noise_family must be one of {NOISE_FAMILIES}")
        if self.adaptivity not in ADAPTIVITIES:
            raise ValueError(f"adaptivity must be one of {ADAPTIVITIES}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class SharpnessReport:
    per_instance: np.ndarray  # S_i >= 0, running max from zero
    aggregate: float


class SemanticsCache:
    """LRU map from (tree key, round seed) to perturbed semantics vectors."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._store: OrderedDict = OrderedDict()

    def __len__(self) -> int:
        return len(self._store)

    def get(self, key) -> Optional[np.ndarray]:
        value = self._store.get(key)
        if value is None:
            self.misses += 1
            return None
        self._store.move_to_end(key)
        self.hits += 1
        return value

    def put(self, key, value: np.ndarray) -> None:
        value = np.asarray(value)
        value.flags.writeable = False
        self._store[key] = value
        self._store.move_to_end(key)
        while len(self._store) > self.capacity:
            self._store.popitem(last=False)


def derive_round_seeds(master_seed: int, rounds: int) -> tuple[int, ...]:
    """Fixed per-run round seeds so caches stay valid across generations."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, _ROUNDS_TAG])
    return tuple(int(s) for s in ss.generate_state(rounds, np.uint64))


def _round_family(family: str, round_seed: int) -> str:
    """Resolve the 'ensemble' family: one pick per round, 1/3 each."""
    if family != "ensemble":
        return family
    rng = np.random.Generator(
        np.random.Philox(key=[int(round_seed) & _MASK64, _FAMILY_TAG])
    )
    xi = rng.random()
    if xi < 1.0 / 3.0:
        return "normal"
    if xi < 2.0 / 3.0:
        return "uniform"
    return "laplace"


def _unit_noise(rng: np.random.Generator, family: str, shape) -> np.ndarray:
    if family == "normal":
        return rng.standard_normal(shape)
    if family == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    if family == "laplace":
        return rng.laplace(0.0, 1.0, shape)
    raise ValueError(f"unknown noise family {family!r}")


def perturb_semantics(
    tree: FeatureTree,
    X: np.ndarray,
    cfg: PerturbationConfig,
    round_seed: int,
    cache: Optional[SemanticsCache] = None,
) -> np.ndarray:
    """Perturbed semantics of one tree for one round seed.

    Every node output, terminals and root included, is replaced by its noisy
    version before flowing upward. The result only depends on the tree
    structure and the round seed, never on the caller.
    """
    key = (tree.nodes, int(round_seed))
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit

    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    nodes = tree.nodes
    family = _round_family(cfg.noise_family, round_seed)
    rng = np.random.Generator(
        np.random.Philox(key=[int(round_seed) & _MASK64, tree.hash64])
    )
    # one bulk draw; row i is the noise for the node at prefix position i
    noise = _unit_noise(rng, family, (len(nodes), n))
    sigma = cfg.sigma
    adaptivity = cfg.adaptivity

    stack: list[np.ndarray] = []
    for i in range(len(nodes) - 1, -1, -1):
        tok = nodes[i]
        if tok >= 0:
            raw = np.clip(X[:, tok], -CLAMP, CLAMP)
        else:
            prim = PRIMITIVES[-tok - 1]
            if prim.arity == 1:
                raw = np.clip(prim.fn(stack.pop()), -CLAMP, CLAMP)
            else:
                a = stack.pop()
                b = stack.pop()
                raw = np.clip(prim.fn(a, b), -CLAMP, CLAMP)
        if adaptivity == "instance":
            value = raw + raw * (sigma * noise[i])
        elif adaptivity == "batch":
            value = raw + (sigma * raw.std()) * noise[i]
        else:
            value = raw + sigma * noise[i]
        stack.append(np.clip(value, -CLAMP, CLAMP))
    out = stack.pop()
    if cache is not None:
        cache.put(key, out)
    return out


def make_batch_groups(
    n: int, m: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Random disjoint mini-batches of size m (last one may be smaller)."""
    perm = rng.permutation(n)
    return [perm[i : i + m] for i in range(0, n, m)]


def aggregate_sharpness(
    diffs: np.ndarray,
    aggregation: str,
    m: int = 4,
    batch_groups: Optional[Sequence[np.ndarray]] = None,
) -> tuple[np.ndarray, float]:
    """Reduce a rounds x instances difference tensor to (S_i, objective).

    The per-instance vector is always the zero-clamped running max. The
    clamp enters the aggregate only for the per-instance and per-batch paths
    (one_sam, m_sam); n_sam and gmp are taken literally as the max/mean of
    round averages.
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.ndim != 2:
        raise ValueError("diffs must be rounds x instances")
    n = diffs.shape[1]
    per_instance = np.maximum(diffs.max(axis=0), 0.0)
    if aggregation == "one_sam":
        aggregate = per_instance.mean()
    elif aggregation == "n_sam":
        aggregate = diffs.mean(axis=1).max()
    elif aggregation == "gmp":
        aggregate = diffs.mean()
    elif aggregation == "m_sam":
        if batch_groups is None:
            batch_groups = [np.arange(i, min(i + m, n)) for i in range(0, n, m)]
        total = 0.0
        for group in batch_groups:
            batch_max = max(diffs[:, group].mean(axis=1).max(), 0.0)
            total += batch_max * len(group)
        aggregate = total / n
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return per_instance, float(aggregate)


def estimate_sharpness(
    trees: Sequence[FeatureTree],
    model: FittedRidgeModel,
    X: np.ndarray,
    Y: np.ndarray,
    cfg: PerturbationConfig,
    *,
    master_seed: int = 0,
    round_seeds: Optional[Sequence[int]] = None,
    cache: Optional[SemanticsCache] = None,
    batch_groups: Optional[Sequence[np.ndarray]] = None,
    phi: Optional[np.ndarray] = None,
) -> SharpnessReport:
    """Run the K-round perturbation loop for one fitted feature set."""
    if model is None or not isinstance(model, FittedRidgeModel):
        raise ValueError("a fitted model is required")
    if model.n_features != len(trees):
        raise ValueError(
            f"model was fitted on {model.n_features} features, "
            f"got {len(trees)} trees"
        )
    if round_seeds is None:
        round_seeds = derive_round_seeds(master_seed, cfg.rounds)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if phi is None:
        phi = np.column_stack([evaluate_tree(t, X) for t in trees])
    base = (model.predict(phi) - Y) ** 2

    diffs = np.empty((len(round_seeds), X.shape[0]))
    phi_tilde = np.empty_like(phi)
    for k, seed in enumerate(round_seeds):
        for j, tree in enumerate(trees):
            phi_tilde[:, j] = perturb_semantics(tree, X, cfg, seed, cache)
        diffs[k] = (model.predict(phi_tilde) - Y) ** 2 - base

    if cfg.aggregation == "m_sam" and batch_groups is None:
        rng = np.random.default_rng(
            np.random.SeedSequence([int(master_seed) & _MASK64, _BATCH_TAG])
        )
        batch_groups = make_batch_groups(X.shape[0], cfg.m, rng)
    per_instance, aggregate = aggregate_sharpness(
        diffs, cfg.aggregation, cfg.m, batch_groups
    )
    return SharpnessReport(per_instance=per_instance, aggregate=aggregate)


class SharpnessEstimator:
    """Bundles config, per-run round seeds, mini-batch grouping and cache."""

    def __init__(
        self,
        cfg: PerturbationConfig,
        master_seed: int,
        n_instances: int,
        cache: Optional[SemanticsCache] = None,
    ):
        self.cfg = cfg
        self.round_seeds = derive_round_seeds(master_seed, cfg.rounds)
        self.cache = cache
        if cfg.aggregation == "m_sam":
            rng = np.random.default_rng(
                np.random.SeedSequence([int(master_seed) & _MASK64, _BATCH_TAG])
            )
            self.batch_groups = make_batch_groups(n_instances, cfg.m, rng)
        else:
            self.batch_groups = None

    def estimate(
        self,
        trees: Sequence[FeatureTree],
        model: FittedRidgeModel,
        X: np.ndarray,
        Y: np.ndarray,
        phi: Optional[np.ndarray] = None,
    ) -> SharpnessReport:
        return estimate_sharpness(
            trees,
            model,
            X,
            Y,
            self.cfg,
            round_seeds=self.round_seeds,
            cache=self.cache,
            batch_groups=self.batch_groups,
            phi=phi,
        )


def perturbation_equivalence_ks(
    width: int,
    samples: int,
    rng: np.random.Generator,
    *,
    weights: Optional[np.ndarray] = None,
    inputs: Optional[np.ndarray] = None,
    matched: bool = True,
    chunk: int = 2048,
) -> float:
    """KS statistic between weight-noise and input-noise outputs of a layer.

    For a linear layer sum_i w_i x_i, noise N(0, w_i^2) on the weights should
    produce the same output distribution as noise N(0, x_i^2) on the inputs.
    With ``matched=False`` the input noise is left unscaled (N(0, 1)) as a
    negative control, which breaks the equivalence whenever |x_i| != 1.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    w = (
        np.asarray(weights, dtype=np.float64)
        if weights is not None
        else rng.standard_normal(width)
    )
    x = (
        np.asarray(inputs, dtype=np.float64)
        if inputs is not None
        else 2.0 * rng.standard_normal(width)
    )
    if w.shape != (width,) or x.shape != (width,):
        raise ValueError("weights/inputs must be vectors of length width")
    weight_scale = np.abs(w)
    input_scale = np.abs(x) if matched else np.ones(width)

    out_w = np.empty(samples)
    out_x = np.empty(samples)
    for start in range(0, samples, chunk):
        stop = min(start + chunk, samples)
        c = stop - start
        eps = rng.standard_normal((c, width)) * weight_scale
        out_w[start:stop] = (w + eps) @ x
        eps = rng.standard_normal((c, width)) * input_scale
        out_x[start:stop] = (x + eps) @ w
    return float(ks_2samp(out_w, out_x).statistic)
