"""Evolutionary loop: lexicase parents, NSGA-II survival, archive, run driver.

Selection pressure is split: lexicase selection picks parents purely from
per-instance cross-validation errors, while the survival step trades the
mean LOOCV loss (o1) against the configured complexity/sharpness objective
(o2). A capacity-bounded archive tracks the historically best individuals
by o1 + o2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import complexity, ridge
from .config import ExperimentConfig, GenerationRecord, RunReport
from .data import Dataset, StandardizationStats
from .inference import (
    ModelBundle,
    ModelMember,
    PredictionBounds,
    ensemble_predict,
    member_predict,
    r2,
    snapshot_trees,
)
from .ridge import EvaluationError
from .sharpness import (
    PerturbationConfig,
    SemanticsCache,
    SharpnessEstimator,
)
from .trees import (
    Individual,
    add_tree,
    crossover,
    delete_tree,
    evaluate_tree,
    mutate,
    ramped_half_and_half,
)

WORST = 1e15
_MASK64 = (1 << 64) - 1
_EVOLVE_TAG = 0x5EED10


@dataclass
class ObjectiveVector:
    o1: float  # mean LOOCV squared error
    o2: float  # sharpness or baseline complexity

    def as_tuple(self) -> tuple[float, float]:
        return (self.o1, self.o2)


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """True when a is no worse in both objectives and strictly better in one."""
    return (
        a.o1 <= b.o1
        and a.o2 <= b.o2
        and (a.o1 < b.o1 or a.o2 < b.o2)
    )


def nondominated_sort(objs: Sequence[tuple[float, float]]) -> list[list[int]]:
    """Fast nondominated sorting; returns index fronts, best first."""
    n = len(objs)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dom_count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(p + 1, n):
            if _dom(objs[p], objs[q]):
                dominated_by[p].append(q)
                dom_count[q] += 1
            elif _dom(objs[q], objs[p]):
                dominated_by[q].append(p)
                dom_count[p] += 1
    for p in range(n):
        if dom_count[p] == 0:
            fronts[0].append(p)
    while fronts[-1]:
        nxt = []
        for p in fronts[-1]:
            for q in dominated_by[p]:
                dom_count[q] -= 1
                if dom_count[q] == 0:
                    nxt.append(q)
        fronts.append(nxt)
    fronts.pop()
    return fronts


def _dom(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def crowding_distances(objs: Sequence[tuple[float, float]]) -> np.ndarray:
    """NSGA-II crowding distance within one front; boundaries are infinite."""
    k = len(objs)
    dist = np.zeros(k)
    if k <= 2:
        dist[:] = np.inf
        return dist
    arr = np.asarray(objs, dtype=np.float64)
    for m in range(arr.shape[1]):
        order = np.argsort(arr[:, m], kind="stable")
        lo, hi = arr[order[0], m], arr[order[-1], m]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = hi - lo
        if span <= 0:
            continue
        gaps = (arr[order[2:], m] - arr[order[:-2], m]) / span
        dist[order[1:-1]] += gaps
    return dist


def nsga2_survival(
    candidates: Sequence[Individual],
    n_survivors: int,
    rng: np.random.Generator,
) -> list[Individual]:
    """Environmental selection: fill by front, cut the last one by crowding.

    Candidates are first put into a canonical order (by objectives, then
    structure) so the surviving multiset does not depend on input order;
    crowding ties at the cut are broken by a seeded random permutation.
    """
    order = sorted(
        range(len(candidates)),
        key=lambda i: (
            candidates[i].objectives.o1,
            candidates[i].objectives.o2,
            candidates[i].key(),
        ),
    )
    cands = [candidates[i] for i in order]
    objs = [c.objectives.as_tuple() for c in cands]
    fronts = nondominated_sort(objs)
    survivors: list[int] = []
    for front in fronts:
        if len(survivors) + len(front) <= n_survivors:
            survivors.extend(front)
            if len(survivors) == n_survivors:
                break
            continue
        need = n_survivors - len(survivors)
        dist = crowding_distances([objs[i] for i in front])
        tie_break = rng.permutation(len(front))
        ranked = sorted(range(len(front)), key=lambda j: (-dist[j], tie_break[j]))
        survivors.extend(front[j] for j in ranked[:need])
        break
    return [cands[i] for i in survivors]


def lexicase_select(pop: Sequence[Individual], rng: np.random.Generator) -> Individual:
    """Filter-chain parent selection over per-instance LOOCV errors.

    Case order is shuffled once; at each case only individuals within the
    median-absolute-deviation threshold of the best survivor error pass.
    Consumes one permutation draw, plus one uniform pick only when several
    survivors remain after the last case.
    """
    errors = np.stack([ind.case_errors for ind in pop])
    return pop[_lexicase_index(errors, rng)]


def _median(values: np.ndarray) -> float:
    # exact np.median semantics without its per-call dispatch overhead
    n = values.shape[0]
    half = n // 2
    if n % 2:
        return float(np.partition(values, half)[half])
    part = np.partition(values, [half - 1, half])
    return float(0.5 * (part[half - 1] + part[half]))


def _lexicase_index(errors: np.ndarray, rng: np.random.Generator) -> int:
    n_cases = errors.shape[1]
    case_order = rng.permutation(n_cases)
    alive = np.arange(errors.shape[0])
    if alive.size == 1:
        return 0
    for case in case_order:
        col = errors[alive, case]
        med = _median(col)
        mad = _median(np.abs(col - med))
        alive = alive[col <= col.min() + mad]
        if alive.size == 1:
            return int(alive[0])
    return int(alive[rng.integers(alive.size)])


def mmd_knee(objs: Sequence[tuple[float, float]]) -> int:
    """Index of the front member minimizing the min-max-normalized sum."""
    if len(objs) == 0:
        raise ValueError("empty front")
    arr = np.asarray(objs, dtype=np.float64)
    mins = arr.min(axis=0)
    span = arr.max(axis=0) - mins
    span = np.where(span > 0, span, 1.0)  # 0/0 normalizes to 0
    sums = ((arr - mins) / span).sum(axis=1)
    best = np.flatnonzero(sums == sums.min())
    if best.size == 1:
        return int(best[0])
    ranked = sorted(best, key=lambda i: (arr[i, 0], arr[i, 1], i))
    return int(ranked[0])


@dataclass
class ArchiveEntry:
    score: float
    ind: Individual


class Archive:
    """Historically best individuals, ranked by o1 + o2, deduplicated.

    Structural duplicates keep their best observed score, so the stored
    scores never exceed the score of anything the archive has seen.
    """

    def __init__(self, capacity: int = 1):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._by_key: dict = {}

    def update(self, ind: Individual) -> None:
        score = ind.objectives.o1 + ind.objectives.o2
        if not np.isfinite(score) or score >= WORST:
            return
        key = ind.key()
        entry = self._by_key.get(key)
        if entry is None or score < entry.score:
            self._by_key[key] = ArchiveEntry(score, ind)
            self._trim()

    def update_many(self, inds: Sequence[Individual]) -> None:
        for ind in inds:
            self.update(ind)

    def _trim(self) -> None:
        if len(self._by_key) <= self.capacity:
            return
        ranked = sorted(self._by_key.items(), key=lambda kv: (kv[1].score, kv[0]))
        self._by_key = dict(ranked[: self.capacity])

    @property
    def members(self) -> list[ArchiveEntry]:
        return sorted(self._by_key.values(), key=lambda e: (e.score, e.ind.key()))

    @property
    def best(self) -> Optional[ArchiveEntry]:
        members = self.members
        return members[0] if members else None

    def __len__(self) -> int:
        return len(self._by_key)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class _EvalContext:
    X: np.ndarray
    Y: np.ndarray
    alpha: float
    measure: str
    estimator: Optional[SharpnessEstimator] = None
    zeta: Optional[np.ndarray] = None
    wcrv_raw: bool = False


def _evaluate(ind: Individual, ctx: _EvalContext) -> None:
    n = ctx.X.shape[0]
    try:
        phi = np.column_stack([evaluate_tree(t, ctx.X) for t in ind.trees])
        model = ridge.fit(phi, ctx.Y, ctx.alpha)
    except (EvaluationError, np.linalg.LinAlgError):
        ind.objectives = ObjectiveVector(WORST, WORST)
        ind.case_errors = np.full(n, WORST)
        ind.model = None
        return
    o1 = float(model.loocv_errors.mean())
    if not np.isfinite(o1):
        ind.objectives = ObjectiveVector(WORST, WORST)
        ind.case_errors = np.full(n, WORST)
        ind.model = None
        return
    ind.model = model
    ind.case_errors = model.loocv_errors

    measure = ctx.measure
    if measure == "sam":
        o2 = ctx.estimator.estimate(ind.trees, model, ctx.X, ctx.Y, phi=phi).aggregate
    elif measure == "none":
        o2 = 0.0
    elif measure == "pp":
        o2 = float(complexity.pp(ind))
    elif measure == "tk":
        o2 = complexity.tk(model, phi)
    elif measure == "rc":
        o2 = complexity.rc(phi, ctx.Y, ctx.alpha, ctx.zeta)
    elif measure == "wcrv":
        residuals = ctx.Y - model.predict(phi)
        variables = ctx.X if ctx.wcrv_raw else phi
        o2 = complexity.wcrv(variables, ctx.Y, residuals)
    elif measure == "iodc":
        o2 = -complexity.iodc(ctx.X, model.predict(phi))
    elif measure == "gc":
        # rank assigned at population level once the whole batch is evaluated
        ind.extras["pp"] = float(complexity.pp(ind))
        ind.extras["tk"] = complexity.tk(model, phi)
        o2 = 0.0
    else:  # pragma: no cover - config validation rejects this earlier
        raise ValueError(f"unknown measure {measure!r}")
    if not np.isfinite(o2):
        o2 = WORST
    ind.objectives = ObjectiveVector(o1, float(o2))


def _assign_gc_ranks(individuals: Sequence[Individual]) -> None:
    scored = [ind for ind in individuals if ind.model is not None]
    if not scored:
        return
    ranks = complexity.gc_ranks(
        [ind.extras["pp"] for ind in scored],
        [ind.extras["tk"] for ind in scored],
    )
    for ind, rank in zip(scored, ranks):
        ind.objectives = ObjectiveVector(ind.objectives.o1, float(rank))


# ---------------------------------------------------------------------------
# variation and survival
# ---------------------------------------------------------------------------

def _make_offspring(
    parents: Sequence[Individual],
    rng: np.random.Generator,
    var_count: int,
    cfg: ExperimentConfig,
) -> list[Individual]:
    offspring: list[Individual] = []
    for i in range(0, len(parents), 2):
        p1, p2 = parents[i], parents[i + 1]
        if rng.random() < cfg.crossover_rate:
            c1, c2 = crossover(p1, p2, rng)
        else:
            c1, c2 = p1.copy_structure(), p2.copy_structure()
        for child in (c1, c2):
            if rng.random() < cfg.mutation_rate:
                child = mutate(child, rng, var_count)
            if rng.random() < cfg.tree_add_rate:
                child = add_tree(child, rng, var_count)
            if rng.random() < cfg.tree_delete_rate:
                child = delete_tree(child, rng)
            offspring.append(child)
    return offspring


def _truncation_elite1(
    parents: Sequence[Individual],
    offspring: Sequence[Individual],
    n_survivors: int,
) -> list[Individual]:
    """Generational replacement with one elite, ordered by o1."""
    def sort_key(ind: Individual):
        return (ind.objectives.o1, ind.key())

    elite = min(list(parents) + list(offspring), key=sort_key)
    pool = list(offspring)
    if all(elite is not child for child in pool):
        pool.append(elite)
    pool.sort(key=sort_key)
    return pool[:n_survivors]


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------

def _build_member(ind: Individual, X: np.ndarray) -> ModelMember:
    return ModelMember(
        trees=list(ind.trees),
        model=ind.model,
        snapshots=snapshot_trees(ind.trees, X),
    )


def _incumbent(
    pop: Sequence[Individual], archive: Archive, measure: str
) -> Individual:
    if measure in ("sam", "none"):
        best = archive.best
        if best is not None:
            return best.ind
        return min(pop, key=lambda ind: (ind.objectives.o1, ind.key()))
    evaluated = [ind for ind in pop if ind.model is not None]
    if not evaluated:
        return pop[0]
    objs = [ind.objectives.as_tuple() for ind in evaluated]
    front = nondominated_sort(objs)[0]
    knee = mmd_knee([objs[i] for i in front])
    return evaluated[front[knee]]


def run(
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    input_stats: Optional[StandardizationStats] = None,
) -> RunReport:
    """Evolve on the (already standardized) train set and score on test."""
    cfg.validate()
    X, Y = train.features, train.target
    Xt, Yt = test.features, test.target
    n = X.shape[0]
    var_count = train.n_vars
    pop_size = cfg.population

    seed_root = np.random.SeedSequence([cfg.seed & _MASK64, _EVOLVE_TAG])
    r_init, r_sel, r_var, r_surv, r_measure = (
        np.random.default_rng(s) for s in seed_root.spawn(5)
    )

    cache = SemanticsCache(cfg.cache_capacity) if cfg.cache else None
    estimator = None
    if cfg.measure == "sam":
        estimator = SharpnessEstimator(
            PerturbationConfig(
                sigma=cfg.sigma,
                rounds=cfg.rounds,
                noise_family=cfg.noise_family,
                adaptivity=cfg.adaptivity,
                aggregation=cfg.aggregation,
                m=cfg.m,
            ),
            cfg.seed,
            n,
            cache,
        )
    ctx = _EvalContext(
        X=X,
        Y=Y,
        alpha=cfg.alpha,
        measure=cfg.measure,
        estimator=estimator,
        wcrv_raw=cfg.wcrv_raw_variables,
    )
    bounds = PredictionBounds.from_targets(Y)
    archive = Archive(cfg.ensemble_size)

    pop = [
        Individual([ramped_half_and_half(r_init, var_count)])
        for _ in range(pop_size)
    ]
    if cfg.measure == "rc":
        ctx.zeta = complexity.draw_zeta(r_measure, n)
    for ind in pop:
        _evaluate(ind, ctx)
    if cfg.measure == "gc":
        _assign_gc_ranks(pop)
    archive.update_many(pop)

    records: list[GenerationRecord] = []
    for gen in range(1, cfg.generations + 1):
        t0 = time.perf_counter()
        if cfg.measure == "rc":
            ctx.zeta = complexity.draw_zeta(r_measure, n)
        errors = np.stack([ind.case_errors for ind in pop])
        parents = [pop[_lexicase_index(errors, r_sel)] for _ in range(pop_size)]
        offspring = _make_offspring(parents, r_var, var_count, cfg)
        for child in offspring:
            _evaluate(child, ctx)
        if cfg.measure == "gc":
            _assign_gc_ranks(list(pop) + offspring)
        archive.update_many(offspring)
        if cfg.measure == "none":
            pop = _truncation_elite1(pop, offspring, pop_size)
        else:
            pop = nsga2_survival(list(pop) + offspring, pop_size, r_surv)

        incumbent = _incumbent(pop, archive, cfg.measure)
        if incumbent.model is not None:
            member = _build_member(incumbent, X)
            train_r2 = r2(Y, member_predict(member, X, bounds))
            test_r2 = r2(Yt, member_predict(member, Xt, bounds))
        else:
            train_r2 = test_r2 = float("nan")
        best_entry = archive.best
        records.append(
            GenerationRecord(
                gen=gen,
                best_o1=min(ind.objectives.o1 for ind in pop),
                best_o2=min(ind.objectives.o2 for ind in pop),
                archive_score=best_entry.score if best_entry else float("nan"),
                train_r2=train_r2,
                test_r2=test_r2,
                seconds=time.perf_counter() - t0,
            )
        )

    # final model: archive (possibly an ensemble) for archive-driven modes,
    # knee point of the final front for the complexity baselines
    if cfg.measure in ("sam", "none"):
        entries = archive.members
        finalists = [e.ind for e in entries] or [
            min(pop, key=lambda ind: (ind.objectives.o1, ind.key()))
        ]
    else:
        finalists = [_incumbent(pop, archive, cfg.measure)]
    members = [_build_member(ind, X) for ind in finalists if ind.model is not None]
    bundle = ModelBundle(
        members=members,
        bounds=bounds,
        input_stats=input_stats,
        feature_names=list(train.names),
    )
    final_train = r2(Y, ensemble_predict(members, X, bounds)) if members else float("nan")
    final_test = r2(Yt, ensemble_predict(members, Xt, bounds)) if members else float("nan")

    evaluated = [ind for ind in pop if ind.model is not None]
    front_pairs: list[tuple[float, float]] = []
    if evaluated:
        objs = [ind.objectives.as_tuple() for ind in evaluated]
        front_pairs = [objs[i] for i in nondominated_sort(objs)[0]]

    return RunReport(
        config=cfg,
        records=records,
        final_train_r2=final_train,
        final_test_r2=final_test,
        final_tree_count=len(finalists[0].trees) if finalists else 0,
        final_node_count=finalists[0].node_count() if finalists else 0,
        archive_size=len(archive),
        cache_hits=cache.hits if cache else 0,
        cache_misses=cache.misses if cache else 0,
        front=front_pairs,
        bundle=bundle,
    )
