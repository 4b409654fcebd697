"""
Gradient Boosted Trees
Second-order boosting on the logistic loss with an L2 penalty on leaf
weights. Each round fits a regression tree to the per-row gradients
g = p − y and hessians h = p(1 − p) of the current ensemble.
"""

import logging
from typing import Any, Dict, List

import numpy as np

from engines.dataset import Dataset
from models.base import ModelSpec, TrainedModel, require_both_classes
from models.trees import TreeNode, split_threshold
from utils.helpers import log_loss_from_logits, open_unit_interval, sigmoid

logger = logging.getLogger("fraudlab.models.gbt")


class GbtModel(TrainedModel):
    """p(x) = sigmoid(base_score + learning_rate · Σ tree(x))."""
    family = "gbt"

    def __init__(self, spec: ModelSpec, n_features: int, base_score: float, trees: List[TreeNode],
                 learning_rate: float, train_loss: List[float] = None):
        super().__init__(spec, n_features)
        self.base_score = float(base_score)
        self.trees = trees
        self.learning_rate = float(learning_rate)
        self.train_loss = list(train_loss or [])

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        score = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            score += self.learning_rate * tree.predict(X)
        return score

    def _proba(self, X: np.ndarray) -> np.ndarray:
        return open_unit_interval(sigmoid(self.decision_function(X)))

    def to_params(self) -> Dict[str, Any]:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
            "train_loss": self.train_loss,
        }

    @classmethod
    def from_params(cls, spec: ModelSpec, n_features: int, params: Dict[str, Any]) -> "GbtModel":
        return cls(spec, n_features, params["base_score"], [TreeNode.from_dict(t) for t in params["trees"]],
                   params["learning_rate"], params.get("train_loss"))


class _NewtonTreeBuilder:
    """Regression tree on (g, h) with leaf weight −G/(H + λ); features are presorted once per fit."""

    def __init__(self, X: np.ndarray, presorted: np.ndarray, max_depth: int,
                 lambda_l2: float, min_child_weight: float):
        self.X = X
        self.presorted = presorted          # (d, n) row order per feature
        self.max_depth = max_depth
        self.lam = lambda_l2
        self.min_child_weight = min_child_weight

    def leaf_value(self, G: float, H: float) -> float:
        denom = H + self.lam
        return float(-G / denom) if denom > 0 else 0.0

    def score(self, G, H):
        denom = H + self.lam
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denom > 0, G * G / np.where(denom > 0, denom, 1.0), 0.0)

    def build(self, g: np.ndarray, h: np.ndarray) -> TreeNode:
        in_node = np.ones(self.X.shape[0], dtype=bool)
        return self._grow(g, h, in_node, 0)

    def _grow(self, g: np.ndarray, h: np.ndarray, in_node: np.ndarray, depth: int) -> TreeNode:
        G, H = float(g[in_node].sum()), float(h[in_node].sum())
        node = TreeNode(value=self.leaf_value(G, H))
        if depth >= self.max_depth or in_node.sum() < 2:
            return node

        parent = float(self.score(G, H))
        best_gain, best_feature, best_threshold = 0.0, None, 0.0
        for f, order in enumerate(self.presorted):
            rows = order[in_node[order]]
            xs = self.X[rows, f]
            GL = np.cumsum(g[rows])[:-1]
            HL = np.cumsum(h[rows])[:-1]
            GR, HR = G - GL, H - HL
            valid = (xs[:-1] < xs[1:]) & (HL >= self.min_child_weight) & (HR >= self.min_child_weight)
            if not valid.any():
                continue
            gain = 0.5 * (self.score(GL, HL) + self.score(GR, HR) - parent)
            gain = np.where(valid, gain, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > best_gain:
                best_gain, best_feature = float(gain[i]), f
                best_threshold = split_threshold(float(xs[i]), float(xs[i + 1]))

        if best_feature is None:
            return node
        go_left = self.X[:, best_feature] <= best_threshold
        node.feature, node.threshold = best_feature, best_threshold
        node.left = self._grow(g, h, in_node & go_left, depth + 1)
        node.right = self._grow(g, h, in_node & ~go_left, depth + 1)
        return node


def gbt_fit(ds: Dataset, spec: ModelSpec) -> GbtModel:
    """
    Start from the log-odds of the training fraud rate, then add
    `n_rounds` trees scaled by `learning_rate`. Only splits with positive
    gain whose children both reach `min_child_weight` hessian mass are taken.
    """
    require_both_classes(ds, "gbt")
    hp = spec.hyperparameters
    X = ds.features
    y = ds.labels.astype(np.float64)
    prevalence = y.mean()
    base_score = float(np.log(prevalence / (1.0 - prevalence)))

    presorted = np.vstack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])])
    builder = _NewtonTreeBuilder(X, presorted, hp["max_depth"], hp["lambda_l2"], hp["min_child_weight"])

    score = np.full(X.shape[0], base_score)
    trees, losses = [], [log_loss_from_logits(score, y)]
    for _ in range(hp["n_rounds"]):
        p = sigmoid(score)
        tree = builder.build(p - y, p * (1.0 - p))
        trees.append(tree)
        score += hp["learning_rate"] * tree.predict(X)
        losses.append(log_loss_from_logits(score, y))

    logger.debug(f"GBT {hp['n_rounds']} rounds: training loss {losses[0]:.5f} → {losses[-1]:.5f}")
    return GbtModel(spec, ds.n_features, base_score, trees, hp["learning_rate"], losses)
