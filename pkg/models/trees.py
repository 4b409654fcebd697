"""
Decision Trees & Random Forest
Binary trees shared by the forest (Gini CART, leaf = fraud fraction) and the
boosted model (leaf = additive log-odds score). A row goes left when
x[feature] <= threshold.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

from engines.dataset import Dataset
from models.base import ModelSpec, TrainedModel, require_both_classes
from utils.helpers import derive_seed

logger = logging.getLogger("fraudlab.models.trees")


@dataclass
class TreeNode:
    """Leaf when `feature` is None; otherwise a split on x[feature] <= threshold."""
    value: float = 0.0
    feature: Optional[int] = None
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    @property
    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves + self.right.n_leaves

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        self._fill(X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
        if self.is_leaf:
            out[rows] = self.value
            return
        go_left = X[rows, self.feature] <= self.threshold
        if go_left.any():
            self.left._fill(X, rows[go_left], out)
        if not go_left.all():
            self.right._fill(X, rows[~go_left], out)

    def to_dict(self) -> Dict[str, Any]:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TreeNode":
        if "feature" not in data:
            return cls(value=float(data["value"]))
        return cls(
            feature=int(data["feature"]),
            threshold=float(data["threshold"]),
            left=cls.from_dict(data["left"]),
            right=cls.from_dict(data["right"]),
        )


def split_threshold(lo: float, hi: float) -> float:
    """Midpoint of two adjacent distinct values, kept strictly below `hi`."""
    mid = lo + (hi - lo) / 2.0
    return mid if lo <= mid < hi else lo


# ─── Gini CART ───

class _GiniTreeBuilder:
    def __init__(self, X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int,
                 features_per_split: int, rng: np.random.Generator):
        self.X = X
        self.y = y
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.features_per_split = features_per_split
        self.rng = rng

    def build(self, rows: np.ndarray, weights: np.ndarray, depth: int = 0) -> TreeNode:
        total = weights.sum()
        positive = weights @ self.y[rows]
        node = TreeNode(value=float(positive / total))
        if depth >= self.max_depth or positive == 0 or positive == total or total < 2 * self.min_leaf:
            return node

        d = self.X.shape[1]
        if self.features_per_split >= d:
            candidates = np.arange(d)
        else:
            candidates = np.sort(self.rng.choice(d, size=self.features_per_split, replace=False))
        best = None     # (impurity, feature, threshold)
        for f in candidates:
            found = self._best_split(rows, weights, int(f))
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            return node

        _, feature, threshold = best
        go_left = self.X[rows, feature] <= threshold
        node.feature, node.threshold = feature, threshold
        node.left = self.build(rows[go_left], weights[go_left], depth + 1)
        node.right = self.build(rows[~go_left], weights[~go_left], depth + 1)
        return node

    def _best_split(self, rows: np.ndarray, weights: np.ndarray, feature: int):
        values = self.X[rows, feature]
        order = np.argsort(values, kind="stable")
        xs, ws, ys = values[order], weights[order], self.y[rows][order]

        cum_w = np.cumsum(ws)[:-1]
        cum_pos = np.cumsum(ws * ys)[:-1]
        total, positive = ws.sum(), ws @ ys
        right_w = total - cum_w
        right_pos = positive - cum_pos

        valid = (xs[:-1] < xs[1:]) & (cum_w >= self.min_leaf) & (right_w >= self.min_leaf)
        if not valid.any():
            return None
        # weighted child Gini: 2·pos·neg/weight per side
        impurity = (
            2.0 * cum_pos * (cum_w - cum_pos) / cum_w
            + 2.0 * right_pos * (right_w - right_pos) / right_w
        )
        impurity = np.where(valid, impurity, np.inf)
        i = int(np.argmin(impurity))
        return float(impurity[i]), split_threshold(float(xs[i]), float(xs[i + 1]))


def cart_fit(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int = 1,
             features_per_split: Optional[int] = None, seed: int = 0,
             weights: Optional[np.ndarray] = None) -> TreeNode:
    """Single Gini tree; `weights` are per-row multiplicities (bootstrap counts)."""
    d = X.shape[1]
    m = d if features_per_split is None else min(int(features_per_split), d)
    rows = np.arange(X.shape[0]) if weights is None else np.flatnonzero(weights)
    w = np.ones(rows.size) if weights is None else np.asarray(weights, dtype=np.float64)[rows]
    builder = _GiniTreeBuilder(X, y.astype(np.float64), max_depth, min_leaf, m, np.random.default_rng(seed))
    return builder.build(rows, w)


# ─── Random Forest ───

class ForestModel(TrainedModel):
    """Soft vote: the mean of the trees' leaf fraud fractions."""
    family = "forest"

    def __init__(self, spec: ModelSpec, n_features: int, trees: List[TreeNode], tree_seeds: List[int]):
        super().__init__(spec, n_features)
        self.trees = trees
        self.tree_seeds = list(tree_seeds)

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) matrix of individual tree probabilities."""
        return np.vstack([tree.predict(X) for tree in self.trees])

    def _proba(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_params(self) -> Dict[str, Any]:
        return {"trees": [t.to_dict() for t in self.trees], "tree_seeds": self.tree_seeds}

    @classmethod
    def from_params(cls, spec: ModelSpec, n_features: int, params: Dict[str, Any]) -> "ForestModel":
        return cls(spec, n_features, [TreeNode.from_dict(t) for t in params["trees"]], params["tree_seeds"])


def _fit_member(X: np.ndarray, y: np.ndarray, hp: Dict[str, Any], features_per_split: int, seed: int) -> TreeNode:
    rng = np.random.default_rng(seed)
    weights = None
    if hp["bootstrap"]:
        n = X.shape[0]
        weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
    return cart_fit(X, y, hp["max_depth"], hp["min_leaf"], features_per_split,
                    seed=int(rng.integers(0, 2 ** 63 - 1)), weights=weights)


def forest_fit(ds: Dataset, spec: ModelSpec, threads: int = 1) -> ForestModel:
    """
    Each tree sees a bootstrap sample of n rows drawn with replacement and
    picks its splits from `features_per_split` random features per node
    (default ⌈√d⌉). Tree seeds derive from the model seed, so the forest is
    the same for any thread count.
    """
    require_both_classes(ds, "forest")
    hp = spec.hyperparameters
    d = ds.n_features
    m = hp["features_per_split"] or math.ceil(math.sqrt(d))
    m = min(m, d)
    seeds = [derive_seed(spec.seed, "forest", "tree", i) for i in range(hp["n_trees"])]
    X, y = ds.features, ds.labels

    trees = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_fit_member)(X, y, hp, m, s) for s in seeds
    )
    logger.debug(f"Forest of {len(trees)} trees, mean depth {np.mean([t.depth for t in trees]):.1f}")
    return ForestModel(spec, d, list(trees), seeds)
