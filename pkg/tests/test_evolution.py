import statistics

import numpy as np
import pytest

from flatgp.config import ExperimentConfig
from flatgp.evolution import (
    Archive,
    ObjectiveVector,
    WORST,
    _lexicase_index,
    crowding_distances,
    dominates,
    lexicase_select,
    mmd_knee,
    nondominated_sort,
    nsga2_survival,
)
from flatgp.trees import Individual, parse_sexpr


def _stub(o1, o2, tag):
    ind = Individual([parse_sexpr(f"x{tag}")])
    ind.objectives = ObjectiveVector(float(o1), float(o2))
    return ind


def test_dominates_truth_table():
    assert dominates(ObjectiveVector(1, 1), ObjectiveVector(2, 2))
    assert not dominates(ObjectiveVector(1, 2), ObjectiveVector(2, 1))
    assert not dominates(ObjectiveVector(2, 1), ObjectiveVector(1, 2))
    assert not dominates(ObjectiveVector(1, 1), ObjectiveVector(1, 1))
    assert dominates(ObjectiveVector(1, 1), ObjectiveVector(1, 2))


def test_survival_keeps_exactly_the_nondominated():
    front = [_stub(i, 10 - i, i) for i in range(10)]
    dominated = [_stub(i + 5, 10 - i + 5, 100 + i) for i in range(10)]
    rng = np.random.default_rng(0)
    survivors = nsga2_survival(front + dominated, 10, rng)
    keys = sorted(ind.key() for ind in survivors)
    assert keys == sorted(ind.key() for ind in front)


def test_partial_front_keeps_boundary_points():
    pop = [_stub(0, 2, 0), _stub(1, 1, 1), _stub(2, 0, 2)]
    rng = np.random.default_rng(1)
    survivors = nsga2_survival(pop, 2, rng)
    objs = sorted(ind.objectives.as_tuple() for ind in survivors)
    assert objs == [(0.0, 2.0), (2.0, 0.0)]


def test_survival_permutation_invariant_multiset():
    rng_data = np.random.default_rng(2)
    pop = [
        _stub(rng_data.integers(0, 6), rng_data.integers(0, 6), tag)
        for tag in range(20)
    ]
    base = sorted(
        ind.key() for ind in nsga2_survival(pop, 10, np.random.default_rng(7))
    )
    for perm_seed in range(5):
        order = np.random.default_rng(perm_seed).permutation(len(pop))
        shuffled = [pop[i] for i in order]
        got = sorted(
            ind.key() for ind in nsga2_survival(shuffled, 10, np.random.default_rng(7))
        )
        assert got == base


def _oracle_fronts(objs):
    """Front peeling by exhaustive pairwise dominance (O(n^2) per layer)."""
    remaining = list(range(len(objs)))
    fronts = []
    while remaining:
        layer = []
        for i in remaining:
            if not any(
                j != i
                and objs[j][0] <= objs[i][0]
                and objs[j][1] <= objs[i][1]
                and objs[j] != objs[i]
                for j in remaining
            ):
                layer.append(i)
        fronts.append(layer)
        remaining = [i for i in remaining if i not in layer]
    return fronts


def _oracle_crowding(front_objs):
    k = len(front_objs)
    if k <= 2:
        return [float("inf")] * k
    dist = [0.0] * k
    for m in range(2):
        order = list(np.argsort([front_objs[i][m] for i in range(k)], kind="stable"))
        dist[order[0]] = float("inf")
        dist[order[-1]] = float("inf")
        span = front_objs[order[-1]][m] - front_objs[order[0]][m]
        if span <= 0:
            continue
        for pos in range(1, k - 1):
            if dist[order[pos]] != float("inf"):
                gap = front_objs[order[pos + 1]][m] - front_objs[order[pos - 1]][m]
                dist[order[pos]] += gap / span
    return dist


def _oracle_survival(pop, n_survivors, seed):
    order = sorted(
        range(len(pop)),
        key=lambda i: (pop[i].objectives.o1, pop[i].objectives.o2, pop[i].key()),
    )
    cands = [pop[i] for i in order]
    objs = [c.objectives.as_tuple() for c in cands]
    rng = np.random.default_rng(seed)
    fronts = _oracle_fronts(objs)
    chosen = []
    for front in fronts:
        if len(chosen) + len(front) <= n_survivors:
            chosen.extend(front)
            if len(chosen) == n_survivors:
                break
            continue
        need = n_survivors - len(chosen)
        dist = _oracle_crowding([objs[i] for i in front])
        tie = rng.permutation(len(front))
        ranked = sorted(range(len(front)), key=lambda j: (-dist[j], tie[j]))
        chosen.extend(front[j] for j in ranked[:need])
        break
    return sorted(cands[i].key() for i in chosen)


def test_survival_matches_exhaustive_oracle():
    rng = np.random.default_rng(3)
    for trial in range(50):
        pop = [
            _stub(rng.integers(0, 8), rng.integers(0, 8), tag) for tag in range(24)
        ]
        want = _oracle_survival(pop, 12, seed=trial)
        got = sorted(
            ind.key()
            for ind in nsga2_survival(pop, 12, np.random.default_rng(trial))
        )
        assert got == want


def test_crowding_distance_interior_value():
    dist = crowding_distances([(0.0, 2.0), (1.0, 1.0), (2.0, 0.0)])
    assert dist[0] == np.inf and dist[2] == np.inf
    assert dist[1] == pytest.approx(2.0)  # (2-0)/2 per objective


def test_nondominated_sort_layers():
    objs = [(0.0, 0.0), (1.0, 1.0), (0.5, 0.2), (2.0, 2.0)]
    fronts = nondominated_sort(objs)
    assert fronts[0] == [0]
    assert set(fronts[1]) == {2}
    assert fronts[-1] == [3]


# ---------------------------------------------------------------------------
# lexicase
# ---------------------------------------------------------------------------

def _oracle_lexicase(errors, seed):
    """Plain-python replay of the filter chain, same rng consumption."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(errors.shape[1])
    alive = list(range(errors.shape[0]))
    if len(alive) == 1:
        return 0
    for case in order:
        col = [errors[i, case] for i in alive]
        med = statistics.median(col)
        mad = statistics.median([abs(v - med) for v in col])
        best = min(col)
        alive = [i for i, v in zip(alive, col) if v <= best + mad]
        if len(alive) == 1:
            return alive[0]
    return alive[int(rng.integers(len(alive)))]


def test_lexicase_population_of_one():
    ind = _stub(1, 1, 0)
    ind.case_errors = np.array([3.0, 1.0])
    assert lexicase_select([ind], np.random.default_rng(0)) is ind


def test_lexicase_dominant_individual_always_wins():
    best = _stub(0, 0, 0)
    best.case_errors = np.zeros(6)
    rest = []
    for tag in range(1, 5):
        ind = _stub(1, 1, tag)
        ind.case_errors = np.full(6, 10.0 * tag)
        rest.append(ind)
    pop = rest[:2] + [best] + rest[2:]
    for seed in range(30):
        assert lexicase_select(pop, np.random.default_rng(seed)) is best


def test_lexicase_matches_replay_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        errors = rng.uniform(0, 5, (5, 6))
        for seed in range(100):
            got = _lexicase_index(errors, np.random.default_rng(seed))
            want = _oracle_lexicase(errors, seed)
            assert got == want


# ---------------------------------------------------------------------------
# knee point
# ---------------------------------------------------------------------------

def test_mmd_knee_examples():
    assert mmd_knee([(0.0, 1.0), (0.5, 0.4), (1.0, 0.0)]) == 1
    assert mmd_knee([(3.0, 4.0)]) == 0
    assert mmd_knee([(0.0, 1.0), (1.0, 0.0)]) == 0  # tie -> lowest o1


def _oracle_knee(objs):
    o1 = [p[0] for p in objs]
    o2 = [p[1] for p in objs]
    span1 = max(o1) - min(o1)
    span2 = max(o2) - min(o2)
    sums = []
    for a, b in objs:
        n1 = (a - min(o1)) / span1 if span1 > 0 else 0.0
        n2 = (b - min(o2)) / span2 if span2 > 0 else 0.0
        sums.append(n1 + n2)
    best = min(sums)
    tied = [i for i, s in enumerate(sums) if s == best]
    tied.sort(key=lambda i: (objs[i][0], objs[i][1], i))
    return tied[0]


def test_mmd_knee_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        k = int(rng.integers(1, 11))
        o1 = np.sort(rng.choice(100, size=k, replace=False)).astype(float)
        o2 = np.sort(rng.choice(100, size=k, replace=False))[::-1].astype(float)
        objs = list(zip(o1, o2))
        assert mmd_knee(objs) == _oracle_knee(objs)


def test_mmd_knee_never_returns_dominated():
    objs = [(0.0, 5.0), (1.0, 3.0), (2.0, 1.0), (4.0, 0.0)]
    idx = mmd_knee(objs)
    others = [o for i, o in enumerate(objs) if i != idx]
    chosen = objs[idx]
    assert not any(
        o[0] <= chosen[0] and o[1] <= chosen[1] and o != chosen for o in others
    )


# ---------------------------------------------------------------------------
# archive
# ---------------------------------------------------------------------------

def test_archive_tracks_best_ever():
    archive = Archive(capacity=1)
    scores = []
    rng = np.random.default_rng(6)
    for tag in range(50):
        ind = _stub(rng.uniform(0, 5), rng.uniform(0, 5), tag)
        archive.update(ind)
        scores.append(ind.objectives.o1 + ind.objectives.o2)
    assert archive.best.score == pytest.approx(min(scores))
    assert len(archive) == 1


def test_archive_capacity_and_membership_invariant():
    archive = Archive(capacity=5)
    rng = np.random.default_rng(7)
    all_scores = []
    for tag in range(40):
        ind = _stub(rng.uniform(0, 5), rng.uniform(0, 5), tag)
        archive.update(ind)
        all_scores.append(ind.objectives.o1 + ind.objectives.o2)
    members = archive.members
    assert len(members) == 5
    member_scores = [e.score for e in members]
    assert member_scores == sorted(member_scores)
    non_members = sorted(all_scores)[5:]
    assert max(member_scores) <= min(non_members) + 1e-12


def test_archive_rejects_failed_evaluations():
    archive = Archive(capacity=3)
    archive.update(_stub(WORST, WORST, 0))
    assert len(archive) == 0


def test_archive_structural_dedup_keeps_best_score():
    archive = Archive(capacity=3)
    a = _stub(3.0, 1.0, 0)
    b = _stub(1.0, 1.0, 0)  # same structure, better score
    archive.update(a)
    archive.update(b)
    assert len(archive) == 1
    assert archive.best.score == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# run-level behaviour (tiny scale)
# ---------------------------------------------------------------------------

def _tiny_csv(tmp_path, n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    y = X[:, 0] * X[:, 1] + 0.3 * rng.standard_normal(n)
    lines = ["a,b,c,target"]
    for row, t in zip(X, y):
        lines.append(",".join(f"{v:.8g}" for v in row) + f",{t:.8g}")
    path = tmp_path / "tiny.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def _tiny_cfg(path, **kw):
    base = dict(
        data_path=path,
        split_rule="ratio-50-50",
        population=8,
        generations=2,
        measure="sam",
        seed=1,
        figures=False,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def _record_tuples(report):
    return [
        (r.gen, r.best_o1, r.best_o2, r.archive_score, r.train_r2, r.test_r2)
        for r in report.records
    ]


def test_run_deterministic(tmp_path):
    from flatgp.runner import run_experiment

    cfg = _tiny_cfg(_tiny_csv(tmp_path))
    r1 = run_experiment(cfg)
    r2 = run_experiment(cfg)
    assert _record_tuples(r1) == _record_tuples(r2)
    assert r1.final_test_r2 == r2.final_test_r2
    assert r1.final_train_r2 == r2.final_train_r2


def test_run_standard_gp_mode(tmp_path):
    from flatgp.runner import run_experiment

    cfg = _tiny_cfg(_tiny_csv(tmp_path), measure="none", generations=5)
    report = run_experiment(cfg)
    assert all(rec.best_o2 == 0.0 for rec in report.records)
    best_o1 = [rec.best_o1 for rec in report.records]
    assert all(b <= a + 1e-12 for a, b in zip(best_o1, best_o1[1:]))


def test_run_archive_score_monotone(tmp_path):
    from flatgp.runner import run_experiment

    cfg = _tiny_cfg(_tiny_csv(tmp_path), generations=6, population=12)
    report = run_experiment(cfg)
    scores = [rec.archive_score for rec in report.records]
    assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:]))


def test_run_population_size_constant_and_ensemble(tmp_path):
    from flatgp.runner import run_experiment

    cfg = _tiny_cfg(
        _tiny_csv(tmp_path), generations=4, population=10, ensemble_size=5
    )
    report = run_experiment(cfg)
    assert 1 <= report.archive_size <= 5
    assert len(report.bundle.members) == report.archive_size
    assert len(report.records) == 4
