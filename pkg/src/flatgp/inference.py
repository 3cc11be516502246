"""Prediction path: sharpness reduction layer, bounded prediction, ensembles.

At inference time every internal node's raw output is snapped to the nearest
value that node produced on the training data (kept pre-sorted, looked up by
binary search). Predictions are then clamped to the training target range.
Training-time evaluation never uses either mechanism.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ridge import FittedRidgeModel
from .trees import (
    CLAMP,
    PRIMITIVES,
    FeatureTree,
    Individual,
    evaluate_tree_with_node_outputs,
)


@dataclass
class SnapshotTree:
    """A tree plus the sorted training-time outputs of each internal node."""

    tree: FeatureTree
    node_values: dict[int, np.ndarray]  # prefix index -> sorted vector


@dataclass
class PredictionBounds:
    y_min: float
    y_max: float

    @classmethod
    def from_targets(cls, Y: np.ndarray) -> "PredictionBounds":
        Y = np.asarray(Y, dtype=np.float64)
        return cls(float(Y.min()), float(Y.max()))


def snapshot(ind: Individual, X_train: np.ndarray) -> list[SnapshotTree]:
    """Capture and sort every internal node's training semantics."""
    return snapshot_trees(ind.trees, X_train)


def snapshot_trees(
    trees: Sequence[FeatureTree], X_train: np.ndarray
) -> list[SnapshotTree]:
    out = []
    for tree in trees:
        _, node_outputs = evaluate_tree_with_node_outputs(tree, X_train)
        values = {
            i: np.sort(node_outputs[i])
            for i, tok in enumerate(tree.nodes)
            if tok < 0
        }
        out.append(SnapshotTree(tree=tree, node_values=values))
    return out


def nearest_stored(sorted_values: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Snap each query to its nearest stored value (ties go left)."""
    if sorted_values.shape[0] == 1:
        return np.full_like(queries, sorted_values[0])
    idx = np.searchsorted(sorted_values, queries)
    idx = np.clip(idx, 1, sorted_values.shape[0] - 1)
    left = sorted_values[idx - 1]
    right = sorted_values[idx]
    return np.where((queries - left) <= (right - queries), left, right)


def reduce_sharpness_eval(snap: SnapshotTree, X: np.ndarray) -> np.ndarray:
    """Evaluate a snapshot tree with every internal output snapped.

    Terminals pass through raw; each internal node's output is replaced by
    its nearest training-time value before cascading upward.
    """
    X = np.asarray(X, dtype=np.float64)
    nodes = snap.tree.nodes
    stack: list[np.ndarray] = []
    for i in range(len(nodes) - 1, -1, -1):
        tok = nodes[i]
        if tok >= 0:
            stack.append(np.clip(X[:, tok], -CLAMP, CLAMP))
            continue
        prim = PRIMITIVES[-tok - 1]
        if prim.arity == 1:
            raw = np.clip(prim.fn(stack.pop()), -CLAMP, CLAMP)
        else:
            a = stack.pop()
            b = stack.pop()
            raw = np.clip(prim.fn(a, b), -CLAMP, CLAMP)
        stack.append(nearest_stored(snap.node_values[i], raw))
    return stack.pop()


def bounded_predict(y_hat: np.ndarray, bounds: PredictionBounds) -> np.ndarray:
    """Clamp predictions into the training target range."""
    return np.clip(y_hat, bounds.y_min, bounds.y_max)


@dataclass
class ModelMember:
    """One archived individual ready for inference."""

    trees: list[FeatureTree]
    model: FittedRidgeModel
    snapshots: list[SnapshotTree]


def member_features(
    member: ModelMember, X: np.ndarray, reduce: bool = True
) -> np.ndarray:
    if reduce:
        cols = [reduce_sharpness_eval(s, X) for s in member.snapshots]
    else:
        from .trees import evaluate_tree

        cols = [evaluate_tree(t, X) for t in member.trees]
    return np.column_stack(cols)


def member_predict(
    member: ModelMember,
    X: np.ndarray,
    bounds: PredictionBounds,
    reduce: bool = True,
) -> np.ndarray:
    phi = member_features(member, X, reduce=reduce)
    return bounded_predict(member.model.predict(phi), bounds)


def ensemble_predict(
    members: Sequence[ModelMember],
    X: np.ndarray,
    bounds: PredictionBounds,
    reduce: bool = True,
) -> np.ndarray:
    """Unweighted mean of the members' bounded predictions."""
    if len(members) == 0:
        raise ValueError("empty ensemble")
    total = np.zeros(np.asarray(X).shape[0])
    for member in members:
        total += member_predict(member, X, bounds, reduce=reduce)
    return total / len(members)


def r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; constant targets score 0 with a warning."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        warnings.warn("constant targets: r2 defined as 0", stacklevel=2)
        return 0.0
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# model bundle serialization
# ---------------------------------------------------------------------------

BUNDLE_FORMAT = "flatgp-model"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    """Self-describing deployable model: members, bounds, input scaling."""

    members: list[ModelMember]
    bounds: PredictionBounds
    input_stats: object = None  # StandardizationStats for raw inputs, or None
    feature_names: list[str] = None

    def predict(self, X_raw: np.ndarray, reduce: bool = True) -> np.ndarray:
        """Full pipeline from raw inputs: scale, construct, predict, bound."""
        X = np.asarray(X_raw, dtype=np.float64)
        if self.input_stats is not None:
            X = self.input_stats.apply(X)
        return ensemble_predict(self.members, X, self.bounds, reduce=reduce)


def bundle_to_dict(bundle: ModelBundle) -> dict:
    from .trees import to_sexpr

    members = []
    for member in bundle.members:
        members.append(
            {
                "trees": [to_sexpr(t) for t in member.trees],
                "weights": member.model.weights.tolist(),
                "target_mean": member.model.target_mean,
                "alpha": member.model.alpha,
                "feature_means": member.model.feature_stats.means.tolist(),
                "feature_stds": member.model.feature_stats.stds.tolist(),
                "snapshots": [
                    {str(i): vals.tolist() for i, vals in snap.node_values.items()}
                    for snap in member.snapshots
                ],
            }
        )
    doc = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "feature_names": list(bundle.feature_names or []),
        "bounds": {"y_min": bundle.bounds.y_min, "y_max": bundle.bounds.y_max},
        "members": members,
    }
    if bundle.input_stats is not None:
        doc["input_standardization"] = {
            "means": bundle.input_stats.means.tolist(),
            "stds": bundle.input_stats.stds.tolist(),
        }
    return doc


def bundle_from_dict(doc: dict) -> ModelBundle:
    from .data import StandardizationStats
    from .ridge import FittedRidgeModel
    from .trees import parse_sexpr

    if doc.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"not a {BUNDLE_FORMAT} document")
    members = []
    for entry in doc["members"]:
        trees = [parse_sexpr(s) for s in entry["trees"]]
        model = FittedRidgeModel(
            weights=np.asarray(entry["weights"], dtype=np.float64),
            target_mean=float(entry["target_mean"]),
            alpha=float(entry["alpha"]),
            feature_stats=StandardizationStats(
                np.asarray(entry["feature_means"], dtype=np.float64),
                np.asarray(entry["feature_stds"], dtype=np.float64),
            ),
            loocv_errors=np.empty(0),
            leverages=np.empty(0),
        )
        snapshots = [
            SnapshotTree(
                tree=tree,
                node_values={
                    int(i): np.asarray(vals, dtype=np.float64)
                    for i, vals in snap.items()
                },
            )
            for tree, snap in zip(trees, entry["snapshots"])
        ]
        members.append(ModelMember(trees=trees, model=model, snapshots=snapshots))
    stats = None
    if "input_standardization" in doc:
        std = doc["input_standardization"]
        stats = StandardizationStats(
            np.asarray(std["means"], dtype=np.float64),
            np.asarray(std["stds"], dtype=np.float64),
        )
    return ModelBundle(
        members=members,
        bounds=PredictionBounds(
            float(doc["bounds"]["y_min"]), float(doc["bounds"]["y_max"])
        ),
        input_stats=stats,
        feature_names=list(doc.get("feature_names", [])),
    )
