"""Symbolic feature trees: primitive set, initialization, evaluation and variation.

Trees are stored as flat prefix-order token tuples. A token ``v >= 0`` is the
terminal variable ``x<v>``; a token ``-(p + 1)`` is the primitive with index
``p`` in :data:`PRIMITIVES`. Trees are immutable after construction, so they
can be hashed, cached and shared between individuals safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

# Every primitive output is clamped to this magnitude so that nested
# operations (square of square of ...) can never reach inf/NaN.
CLAMP = 1e12

MAX_DEPTH = 10
MAX_TREES = 10
INIT_DEPTH_RANGE = (0, 3)


class StructureError(ValueError):
    """Raised for malformed trees or out-of-range variable references."""


def _clamp(values: np.ndarray) -> np.ndarray:
    return np.clip(values, -CLAMP, CLAMP)


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int
    fn: Callable[..., np.ndarray]


def _aq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # analytical quotient: division protected by sqrt(1 + b^2) >= 1
    return a / np.sqrt(1.0 + b * b)


def _protected_log(a: np.ndarray) -> np.ndarray:
    return np.log1p(np.abs(a))


PRIMITIVES: tuple[Primitive, ...] = (
    Primitive("add", 2, lambda a, b: a + b),
    Primitive("sub", 2, lambda a, b: a - b),
    Primitive("mul", 2, lambda a, b: a * b),
    Primitive("aq", 2, _aq),
    Primitive("square", 1, lambda a: a * a),
    Primitive("sqrt", 1, lambda a: np.sqrt(np.abs(a))),
    Primitive("abs", 1, np.abs),
    Primitive("log", 1, _protected_log),
    Primitive("max", 2, np.maximum),
    Primitive("min", 2, np.minimum),
    Primitive("sin", 1, np.sin),
    Primitive("cos", 1, np.cos),
    Primitive("neg", 1, lambda a: -a),
    Primitive("sigmoid", 1, expit),
)

_PRIMITIVE_INDEX = {p.name: i for i, p in enumerate(PRIMITIVES)}


def primitive_semantics(name: str, *inputs: np.ndarray) -> np.ndarray:
    """Apply one named primitive elementwise to equal-length input vectors."""
    idx = _PRIMITIVE_INDEX.get(name.lower())
    if idx is None:
        raise StructureError(f"unknown primitive: {name!r}")
    prim = PRIMITIVES[idx]
    if len(inputs) != prim.arity:
        raise StructureError(
            f"{prim.name} expects {prim.arity} inputs, got {len(inputs)}"
        )
    arrays = [np.asarray(v, dtype=np.float64) for v in inputs]
    if len(arrays) == 2 and arrays[0].shape != arrays[1].shape:
        raise StructureError("input vectors must have equal length")
    return _clamp(prim.fn(*arrays))


def _validate_tokens(nodes: Sequence[int]) -> int:
    """Check prefix arity structure and return tree depth (leaf = 0)."""
    if len(nodes) == 0:
        raise StructureError("empty token sequence")
    stack: list[int] = [0]  # depth of each still-expected node
    max_depth = 0
    for tok in nodes:
        if not stack:
            raise StructureError("extra tokens after complete tree")
        d = stack.pop()
        max_depth = max(max_depth, d)
        if tok >= 0:
            continue
        p = -tok - 1
        if p >= len(PRIMITIVES):
            raise StructureError(f"bad primitive token {tok}")
        stack.extend([d + 1] * PRIMITIVES[p].arity)
    if stack:
        raise StructureError("truncated token sequence")
    return max_depth


class FeatureTree:
    """One constructed feature as an immutable prefix-order expression tree."""

    __slots__ = ("nodes", "depth", "_hash64")

    def __init__(self, nodes: Sequence[int]):
        nodes = tuple(int(t) for t in nodes)
        depth = _validate_tokens(nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "_hash64", _mix_tokens(nodes))

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("FeatureTree is immutable")

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureTree) and self.nodes == other.nodes

    def __hash__(self) -> int:
        return hash(self.nodes)

    def __repr__(self) -> str:
        return f"FeatureTree({to_sexpr(self)!r})"

    @property
    def hash64(self) -> int:
        """Stable 64-bit structural hash (process-independent)."""
        return self._hash64


def _mix_tokens(nodes: tuple[int, ...]) -> int:
    # splitmix64-style fold; stable across processes unlike hash()
    h = 0x9E3779B97F4A7C15
    for tok in nodes:
        h = (h ^ (tok & 0xFFFFFFFFFFFFFFFF)) * 0xBF58476D1CE4E5B9 % (1 << 64)
        h = (h ^ (h >> 31)) * 0x94D049BB133111EB % (1 << 64)
        h ^= h >> 29
    return h


def canonical_key(tree: FeatureTree) -> tuple[int, ...]:
    """Opaque hashable key; equal exactly for structurally identical trees."""
    return tree.nodes


def subtree_end(nodes: Sequence[int], start: int) -> int:
    """Index one past the subtree rooted at ``start`` in prefix order."""
    need = 1
    i = start
    while need:
        tok = nodes[i]
        need += 0 if tok >= 0 else PRIMITIVES[-tok - 1].arity
        need -= 1
        i += 1
    return i


def evaluate_tree(tree: FeatureTree, X: np.ndarray) -> np.ndarray:
    """Semantics of the tree on input matrix X (n_instances x n_vars)."""
    return _evaluate(tree.nodes, X, collect=False)


def evaluate_tree_with_node_outputs(
    tree: FeatureTree, X: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Tree semantics plus the output vector of every node by prefix index."""
    return _evaluate(tree.nodes, X, collect=True)


def _evaluate(nodes, X, collect):
    X = np.asarray(X, dtype=np.float64)
    n_vars = X.shape[1]
    outputs: Optional[list] = [None] * len(nodes) if collect else None
    stack: list[np.ndarray] = []
    # right-to-left scan of prefix order: operands pop in child order
    for i in range(len(nodes) - 1, -1, -1):
        tok = nodes[i]
        if tok >= 0:
            if tok >= n_vars:
                raise StructureError(
                    f"variable x{tok} out of range for {n_vars} inputs"
                )
            value = _clamp(X[:, tok])
        else:
            prim = PRIMITIVES[-tok - 1]
            if prim.arity == 1:
                value = _clamp(prim.fn(stack.pop()))
            else:
                a = stack.pop()
                b = stack.pop()
                value = _clamp(prim.fn(a, b))
        if collect:
            outputs[i] = value
        stack.append(value)
    result = stack.pop()
    if collect:
        return result, outputs
    return result


# ---------------------------------------------------------------------------
# serialization: prefix s-expressions such as "(aq (add x0 x1) x2)"
# ---------------------------------------------------------------------------

def to_sexpr(tree: FeatureTree) -> str:
    """Canonical textual form: lowercase primitive names, x<i> terminals."""
    out, _ = _sexpr_at(tree.nodes, 0)
    return out


def _sexpr_at(nodes, i):
    tok = nodes[i]
    if tok >= 0:
        return f"x{tok}", i + 1
    prim = PRIMITIVES[-tok - 1]
    parts = [prim.name]
    j = i + 1
    for _ in range(prim.arity):
        s, j = _sexpr_at(nodes, j)
        parts.append(s)
    return "(" + " ".join(parts) + ")", j


def parse_sexpr(text: str) -> FeatureTree:
    """Parse the canonical s-expression grammar (case-insensitive)."""
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    nodes: list[int] = []
    pos = _parse_tokens(tokens, 0, nodes)
    if pos != len(tokens):
        raise StructureError(f"trailing input after expression: {text!r}")
    return FeatureTree(nodes)


def _parse_tokens(tokens, pos, nodes):
    if pos >= len(tokens):
        raise StructureError("unexpected end of expression")
    tok = tokens[pos]
    if tok == "(":
        if pos + 1 >= len(tokens):
            raise StructureError("unexpected end of expression")
        name = tokens[pos + 1].lower()
        idx = _PRIMITIVE_INDEX.get(name)
        if idx is None:
            raise StructureError(f"unknown primitive: {name!r}")
        nodes.append(-idx - 1)
        pos += 2
        for _ in range(PRIMITIVES[idx].arity):
            pos = _parse_tokens(tokens, pos, nodes)
        if pos >= len(tokens) or tokens[pos] != ")":
            raise StructureError(f"missing ')' near token {pos}")
        return pos + 1
    if tok == ")":
        raise StructureError("unexpected ')'")
    low = tok.lower()
    if not low.startswith("x"):
        raise StructureError(f"bad terminal {tok!r}")
    try:
        var = int(low[1:])
    except ValueError as exc:
        raise StructureError(f"bad terminal {tok!r}") from exc
    if var < 0:
        raise StructureError(f"bad terminal {tok!r}")
    nodes.append(var)
    return pos + 1


# ---------------------------------------------------------------------------
# random construction
# ---------------------------------------------------------------------------

def random_tree(
    rng: np.random.Generator,
    var_count: int,
    max_depth: int,
    method: str = "grow",
) -> FeatureTree:
    """Grow or full construction down to ``max_depth`` (depth 0 = one leaf)."""
    if var_count < 1:
        raise ValueError("var_count must be >= 1")
    nodes: list[int] = []
    _grow(rng, var_count, max_depth, method == "full", nodes)
    return FeatureTree(nodes)


def _grow(rng, var_count, depth_left, full, nodes):
    n_prims = len(PRIMITIVES)
    if depth_left <= 0:
        nodes.append(int(rng.integers(var_count)))
        return
    if full:
        choice = int(rng.integers(n_prims))
    else:
        # uniform over the combined primitive + terminal set
        pick = int(rng.integers(n_prims + var_count))
        if pick >= n_prims:
            nodes.append(pick - n_prims)
            return
        choice = pick
    nodes.append(-choice - 1)
    for _ in range(PRIMITIVES[choice].arity):
        _grow(rng, var_count, depth_left - 1, full, nodes)


def ramped_half_and_half(
    rng: np.random.Generator,
    var_count: int,
    depth_range: tuple[int, int] = INIT_DEPTH_RANGE,
) -> FeatureTree:
    """Standard ramped initialization: random depth in range, grow/full mixed."""
    lo, hi = depth_range
    depth = int(rng.integers(lo, hi + 1))
    method = "full" if rng.random() < 0.5 else "grow"
    return random_tree(rng, var_count, depth, method)


# ---------------------------------------------------------------------------
# individuals and variation operators
# ---------------------------------------------------------------------------

@dataclass
class Individual:
    """A feature set: 1..MAX_TREES trees plus evaluation caches.

    Variation operators return fresh individuals with empty caches, so a
    cached fit can never outlive a structural change.
    """

    trees: list[FeatureTree]
    objectives: object = None  # ObjectiveVector, set by evolution
    case_errors: Optional[np.ndarray] = None  # per-instance LOOCV errors
    model: object = None  # FittedRidgeModel
    extras: dict = field(default_factory=dict)  # measure scratch (pp/tk, ...)

    def key(self) -> tuple:
        return tuple(t.nodes for t in self.trees)

    def copy_structure(self) -> "Individual":
        return Individual(list(self.trees))

    def node_count(self) -> int:
        return sum(len(t) for t in self.trees)


_DEPTH_RETRIES = 3


def _swap_subtree(tree_a: FeatureTree, i_a: int, tree_b: FeatureTree, i_b: int):
    end_a = subtree_end(tree_a.nodes, i_a)
    end_b = subtree_end(tree_b.nodes, i_b)
    sub_a = tree_a.nodes[i_a:end_a]
    sub_b = tree_b.nodes[i_b:end_b]
    new_a = tree_a.nodes[:i_a] + sub_b + tree_a.nodes[end_a:]
    new_b = tree_b.nodes[:i_b] + sub_a + tree_b.nodes[end_b:]
    return FeatureTree(new_a), FeatureTree(new_b)


def crossover(
    a: Individual, b: Individual, rng: np.random.Generator
) -> tuple[Individual, Individual]:
    """Exchange a uniform random subtree between one tree of each parent.

    Offspring deeper than MAX_DEPTH are rejected; after the retries both
    parents are returned as unchanged copies.
    """
    for _ in range(1 + _DEPTH_RETRIES):
        ti_a = int(rng.integers(len(a.trees)))
        ti_b = int(rng.integers(len(b.trees)))
        tree_a = a.trees[ti_a]
        tree_b = b.trees[ti_b]
        i_a = int(rng.integers(len(tree_a)))
        i_b = int(rng.integers(len(tree_b)))
        new_a, new_b = _swap_subtree(tree_a, i_a, tree_b, i_b)
        if new_a.depth <= MAX_DEPTH and new_b.depth <= MAX_DEPTH:
            child_a = a.copy_structure()
            child_b = b.copy_structure()
            child_a.trees[ti_a] = new_a
            child_b.trees[ti_b] = new_b
            return child_a, child_b
    return a.copy_structure(), b.copy_structure()


def mutate(a: Individual, rng: np.random.Generator, var_count: int) -> Individual:
    """Replace a uniform random subtree with a freshly grown one (depth <= 3)."""
    for _ in range(1 + _DEPTH_RETRIES):
        ti = int(rng.integers(len(a.trees)))
        tree = a.trees[ti]
        i = int(rng.integers(len(tree)))
        depth = int(rng.integers(INIT_DEPTH_RANGE[0], INIT_DEPTH_RANGE[1] + 1))
        sub = random_tree(rng, var_count, depth, "grow")
        end = subtree_end(tree.nodes, i)
        new_tree = FeatureTree(tree.nodes[:i] + sub.nodes + tree.nodes[end:])
        if new_tree.depth <= MAX_DEPTH:
            child = a.copy_structure()
            child.trees[ti] = new_tree
            return child
    return a.copy_structure()


def add_tree(a: Individual, rng: np.random.Generator, var_count: int) -> Individual:
    """Append one random tree; no-op at the MAX_TREES cap."""
    if len(a.trees) >= MAX_TREES:
        return a.copy_structure()
    child = a.copy_structure()
    child.trees.append(ramped_half_and_half(rng, var_count))
    return child


def delete_tree(a: Individual, rng: np.random.Generator) -> Individual:
    """Remove one uniform random tree; no-op when only one tree remains."""
    if len(a.trees) <= 1:
        return a.copy_structure()
    child = a.copy_structure()
    del child.trees[int(rng.integers(len(child.trees)))]
    return child
