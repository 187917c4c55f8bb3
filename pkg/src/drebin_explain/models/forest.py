"""Random forest of CART trees grown with Gini splits on binary features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError
from ..featurespace import MALWARE, LabeledDataset
from .base import DecisionModel, as_matrix

LEAF = -1


@dataclass(eq=False)
class DecisionTree:
    """Array-encoded binary tree.

    ``feature[k] == -1`` marks a leaf; otherwise samples with ``x_j == 0``
    go to ``left[k]`` and the rest to ``right[k]``.  ``value`` holds the
    malware fraction of the training samples that reached each node.
    """

    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, k: int) -> bool:
        return self.feature[k] == LEAF

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            k, d = stack.pop()
            if self.feature[k] == LEAF:
                best = max(best, d)
            else:
                stack += [(self.left[k], d + 1), (self.right[k], d + 1)]
        return best

    def apply(self, X) -> np.ndarray:
        """Leaf value reached by every row of a dense 0/1 matrix."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != LEAF
            if not inner.any():
                return self.value[node]
            r = rows[inner]
            go_right = X[r, feat[inner]] > 0.5
            node[r] = np.where(go_right, self.right[node[r]], self.left[node[r]])

    def evaluate(self, active: set) -> float:
        """Walk the tree for one sample given its active feature set."""
        k = 0
        while self.feature[k] != LEAF:
            k = self.right[k] if self.feature[k] in active else self.left[k]
        return float(self.value[k])


@dataclass(eq=False)
class RandomForestModel(DecisionModel):
    trees: list
    dim: int
    hyperparameters: dict = field(default_factory=dict)
    vocabulary_hash: str = ""

    model_type = "random_forest"
    differentiable = False

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def vote_fraction(self, X) -> np.ndarray:
        X = as_matrix(X, self.dim)
        out = np.zeros(X.shape[0])
        chunk = max(1, 2_000_000 // max(self.dim, 1))
        for start in range(0, X.shape[0], chunk):
            block = X[start:start + chunk]
            block = block.toarray() if sp.issparse(block) else block
            out[start:start + chunk] = sum(t.apply(block) for t in self.trees)
        return out / len(self.trees)

    def decision_function(self, X) -> np.ndarray:
        return self.vote_fraction(X) - 0.5


def _grow_tree(Xb, ypos, idx, rng, n_candidates, max_depth, min_leaf):
    feature, left, right, value = [], [], [], []
    d = Xb.shape[1]

    def new_node(rows):
        feature.append(LEAF)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(ypos[rows].mean()))
        return len(feature) - 1

    root = new_node(idx)
    stack = [(root, idx, 0)]
    while stack:
        k, rows, depth = stack.pop()
        n = rows.shape[0]
        pos = int(ypos[rows].sum())
        if pos == 0 or pos == n or depth >= max_depth or n < 2 * min_leaf:
            continue
        sub = Xb[rows]
        ysub = ypos[rows]
        order = rng.permutation(d)
        best = None
        # keep drawing candidates until one of them actually splits the node
        for start in range(0, d, n_candidates):
            cand = np.sort(order[start:start + n_candidates])
            cols = sub[:, cand]
            n1 = cols.sum(axis=0)
            p1 = cols[ysub].sum(axis=0)
            n0 = n - n1
            p0 = pos - p1
            valid = (n1 >= min_leaf) & (n0 >= min_leaf)
            if not valid.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                g1 = 1.0 - (p1 / n1) ** 2 - ((n1 - p1) / n1) ** 2
                g0 = 1.0 - (p0 / n0) ** 2 - ((n0 - p0) / n0) ** 2
                impurity = (n1 * np.nan_to_num(g1) + n0 * np.nan_to_num(g0)) / n
            impurity[~valid] = np.inf
            best = int(cand[np.argmin(impurity)])
            break
        if best is None:
            continue
        mask = Xb[rows, best]
        feature[k] = best
        left_rows, right_rows = rows[~mask], rows[mask]
        left[k] = new_node(left_rows)
        right[k] = new_node(right_rows)
        stack.append((right[k], right_rows, depth + 1))
        stack.append((left[k], left_rows, depth + 1))
    return DecisionTree(feature, left, right, value)


def train_random_forest(
    ds: LabeledDataset,
    n_trees: int = 10,
    seed: int = 0,
    *,
    max_depth: int = 30,
    min_leaf: int = 1,
    max_features: int | None = None,
    bootstrap: bool = True,
    vocabulary_hash: str = "",
) -> RandomForestModel:
    """Bootstrap-aggregated Gini trees over ``ceil(sqrt(d))`` candidate features per node."""
    if n_trees < 1:
        raise ConfigError(f"n_trees must be >= 1, got {n_trees}")
    if not len(ds):
        raise ConfigError("cannot train on an empty dataset")
    Xb = ds.X.toarray() > 0.5
    ypos = ds.labels == MALWARE
    n_candidates = max_features or max(1, math.ceil(math.sqrt(ds.dim)))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        if bootstrap:
            idx = np.sort(rng.integers(0, len(ds), size=len(ds)))
        else:
            idx = np.arange(len(ds))
        trees.append(_grow_tree(Xb, ypos, idx, rng, n_candidates, max_depth, min_leaf))
    hyper = {"n_trees": int(n_trees), "max_depth": int(max_depth), "min_leaf": int(min_leaf),
             "max_features": int(n_candidates), "seed": int(seed)}
    return RandomForestModel(trees, ds.dim, hyper, vocabulary_hash)
