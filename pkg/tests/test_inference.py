import json

import numpy as np
import pytest

from flatgp import ridge
from flatgp.data import StandardizationStats
from flatgp.inference import (
    ModelBundle,
    ModelMember,
    PredictionBounds,
    SnapshotTree,
    bounded_predict,
    bundle_from_dict,
    bundle_to_dict,
    ensemble_predict,
    member_predict,
    nearest_stored,
    r2,
    reduce_sharpness_eval,
    snapshot_trees,
)
from flatgp.ridge import FittedRidgeModel
from flatgp.trees import (
    PRIMITIVES,
    evaluate_tree,
    parse_sexpr,
    random_tree,
)


def test_snapshot_terminal_only():
    snaps = snapshot_trees([parse_sexpr("x0")], np.array([[1.0], [2.0]]))
    assert snaps[0].node_values == {}


def test_snapshot_example():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    snaps = snapshot_trees([parse_sexpr("(add x0 x1)")], X)
    assert np.array_equal(snaps[0].node_values[0], [3.0, 7.0])


def _manual_node_outputs(nodes, pos, X):
    """Recursive reference evaluator returning (value, end, {pos: value})."""
    tok = nodes[pos]
    if tok >= 0:
        return np.clip(X[:, tok], -1e12, 1e12), pos + 1, {}
    prim = PRIMITIVES[-tok - 1]
    args = []
    out = {}
    nxt = pos + 1
    for _ in range(prim.arity):
        val, nxt, sub = _manual_node_outputs(nodes, nxt, X)
        args.append(val)
        out.update(sub)
    value = np.clip(prim.fn(*args), -1e12, 1e12)
    out[pos] = value
    return value, nxt, out


def test_snapshot_matches_recomputation_oracle():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 4))
    for _ in range(30):
        tree = random_tree(rng, 4, int(rng.integers(1, 5)), "grow")
        snaps = snapshot_trees([tree], X)[0]
        _, _, want = _manual_node_outputs(tree.nodes, 0, X)
        assert set(snaps.node_values) == set(want)
        for idx, vals in want.items():
            assert np.array_equal(snaps.node_values[idx], np.sort(vals))


def test_nearest_stored_hand_traces():
    stored = np.array([3.0, 7.0])
    assert nearest_stored(stored, np.array([4.9]))[0] == 3.0  # 1.9 <= 2.1
    assert nearest_stored(stored, np.array([5.1]))[0] == 7.0
    assert nearest_stored(stored, np.array([100.0]))[0] == 7.0  # clipped high
    assert nearest_stored(stored, np.array([-100.0]))[0] == 3.0  # clipped low
    assert nearest_stored(stored, np.array([5.0]))[0] == 3.0  # tie -> left
    assert nearest_stored(stored, np.array([3.0]))[0] == 3.0  # exact hit
    assert nearest_stored(np.array([4.0]), np.array([9.9]))[0] == 4.0


def test_reduce_examples():
    train = np.array([[1.0, 2.0], [3.0, 4.0]])  # add outputs {3, 7}
    snap = snapshot_trees([parse_sexpr("(add x0 x1)")], train)[0]
    got = reduce_sharpness_eval(snap, np.array([[2.4, 2.5], [60.0, 40.0]]))
    assert np.array_equal(got, [3.0, 7.0])


def test_reduce_training_inputs_reproduce_exactly():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((25, 3))
    for _ in range(20):
        tree = random_tree(rng, 3, int(rng.integers(1, 6)), "grow")
        snap = snapshot_trees([tree], X)[0]
        assert np.array_equal(reduce_sharpness_eval(snap, X), evaluate_tree(tree, X))


def _reduced_with_membership_check(snap, X):
    """Reference reduced evaluator asserting the membership property."""
    nodes = snap.tree.nodes

    def rec(pos):
        tok = nodes[pos]
        if tok >= 0:
            return np.clip(X[:, tok], -1e12, 1e12), pos + 1
        prim = PRIMITIVES[-tok - 1]
        args = []
        nxt = pos + 1
        for _ in range(prim.arity):
            val, nxt = rec(nxt)
            args.append(val)
        raw = np.clip(prim.fn(*args), -1e12, 1e12)
        stored = snap.node_values[pos]
        snapped = nearest_stored(stored, raw)
        assert np.all(np.isin(snapped, stored))
        return snapped, nxt

    value, _ = rec(0)
    return value


def test_reduce_membership_property_on_test_inputs():
    rng = np.random.default_rng(2)
    X_train = rng.standard_normal((30, 3))
    X_test = rng.standard_normal((15, 3)) * 2.0
    for _ in range(20):
        tree = random_tree(rng, 3, int(rng.integers(1, 6)), "grow")
        snap = snapshot_trees([tree], X_train)[0]
        want = _reduced_with_membership_check(snap, X_test)
        assert np.array_equal(reduce_sharpness_eval(snap, X_test), want)


def test_bounded_predict():
    bounds = PredictionBounds(0.0, 10.0)
    inside = np.array([0.0, 5.0, 10.0])
    assert np.array_equal(bounded_predict(inside, bounds), inside)
    assert bounded_predict(np.array([15.0]), bounds)[0] == 10.0
    assert bounded_predict(np.array([-3.0]), bounds)[0] == 0.0
    rng = np.random.default_rng(3)
    raw = rng.uniform(-20, 20, 100)
    want = np.minimum(np.maximum(raw, 0.0), 10.0)
    assert np.array_equal(bounded_predict(raw, bounds), want)


def _identity_member(target_mean):
    tree = parse_sexpr("x0")
    model = FittedRidgeModel(
        weights=np.array([1.0]),
        target_mean=target_mean,
        alpha=0.1,
        feature_stats=StandardizationStats(np.zeros(1), np.ones(1)),
        loocv_errors=np.empty(0),
        leverages=np.empty(0),
    )
    return ModelMember(trees=[tree], model=model,
                       snapshots=[SnapshotTree(tree, {})])


def test_ensemble_mean_arithmetic():
    bounds = PredictionBounds(-100.0, 100.0)
    m1 = _identity_member(0.0)  # predicts {1, 3}
    m2 = _identity_member(2.0)  # predicts {3, 5}
    X = np.array([[1.0], [3.0]])
    assert np.array_equal(ensemble_predict([m1], X, bounds), [1.0, 3.0])
    got = ensemble_predict([m1, m2], X, bounds)
    assert np.array_equal(got, [2.0, 4.0])
    with pytest.raises(ValueError):
        ensemble_predict([], X, bounds)


def _fitted_member(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 3))
    Y = X[:, 0] - X[:, 2] + 0.1 * rng.standard_normal(30)
    trees = [random_tree(rng, 3, 3, "grow") for _ in range(3)]
    phi = np.column_stack([evaluate_tree(t, X) for t in trees])
    model = ridge.fit(phi, Y, 0.1)
    member = ModelMember(trees=trees, model=model,
                         snapshots=snapshot_trees(trees, X))
    return member, X, Y


def test_ensemble_matches_recomputation():
    members = []
    bounds = PredictionBounds(-3.0, 3.0)
    rng = np.random.default_rng(4)
    X_test = rng.standard_normal((12, 3))
    for seed in range(5):
        member, _, _ = _fitted_member(seed)
        members.append(member)
    got = ensemble_predict(members, X_test, bounds)
    want = np.mean(
        [member_predict(m, X_test, bounds) for m in members], axis=0
    )
    assert np.max(np.abs(got - want)) < 1e-12
    # an ensemble of identical members equals the single member
    twin = ensemble_predict([members[0], members[0]], X_test, bounds)
    assert np.array_equal(twin, member_predict(members[0], X_test, bounds))


def test_member_pipeline_on_train_equals_raw_bounded():
    member, X, Y = _fitted_member(11)
    bounds = PredictionBounds.from_targets(Y)
    reduced = member_predict(member, X, bounds, reduce=True)
    raw = member_predict(member, X, bounds, reduce=False)
    assert np.array_equal(reduced, raw)


def test_r2_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert r2(y, y) == 1.0
    assert r2(y, np.full(3, 2.0)) == 0.0
    assert r2(y, np.array([1.0, 2.0, 5.0])) == pytest.approx(-1.0)
    with pytest.warns(UserWarning):
        assert r2(np.full(3, 1.0), y) == 0.0
    with pytest.raises(ValueError):
        r2(y, np.zeros(4))


def test_bundle_json_round_trip():
    member, X, Y = _fitted_member(12)
    bundle = ModelBundle(
        members=[member],
        bounds=PredictionBounds.from_targets(Y),
        input_stats=StandardizationStats(np.zeros(3), np.ones(3)),
        feature_names=["a", "b", "c"],
    )
    doc = json.loads(json.dumps(bundle_to_dict(bundle)))
    back = bundle_from_dict(doc)
    rng = np.random.default_rng(5)
    X_new = rng.standard_normal((8, 3))
    assert np.allclose(bundle.predict(X_new), back.predict(X_new), atol=1e-15)
    assert back.feature_names == ["a", "b", "c"]
    with pytest.raises(ValueError):
        bundle_from_dict({"format": "other"})
