"""
k-Nearest Neighbours
Stores the training rows; the class-1 probability of a query is the fraction
of fraud labels among its k nearest rows by Euclidean distance. Distance ties
go to the smaller row_id.
"""

import logging
from typing import Any, Dict

import numpy as np

from engines.dataset import Dataset
from models.base import ModelSpec, TrainedModel
from utils.errors import HyperparameterError

logger = logging.getLogger("fraudlab.models.knn")

_BLOCK_FLOATS = 8_000_000
_BAND = 1e-8


class KnnModel(TrainedModel):
    family = "knn"

    def __init__(self, spec: ModelSpec, features: np.ndarray, labels: np.ndarray, row_ids: np.ndarray):
        super().__init__(spec, features.shape[1])
        order = np.argsort(row_ids, kind="stable")
        self.features = np.asarray(features, dtype=np.float64)[order]
        self.labels = np.asarray(labels, dtype=np.float64)[order]
        self.row_ids = np.asarray(row_ids, dtype=np.int64)[order]
        self.k = int(spec.hyperparameters["k"])
        self._sq_norms = np.einsum("ij,ij->i", self.features, self.features)

    def neighbors(self, X: np.ndarray) -> np.ndarray:
        """(n_queries, k) positions of the nearest stored rows, nearest first."""
        n = self.features.shape[0]
        k = self.k
        out = np.empty((X.shape[0], k), dtype=np.int64)
        block = max(1, _BLOCK_FLOATS // n)
        max_norm = float(self._sq_norms.max())

        for start in range(0, X.shape[0], block):
            Q = X[start:start + block]
            q_norms = np.einsum("ij,ij->i", Q, Q)
            # expansion distances only shortlist candidates; ranking uses exact distances
            approx = q_norms[:, None] + self._sq_norms[None, :] - 2.0 * (Q @ self.features.T)
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            band = kth + 2.0 * _BAND * (q_norms + max_norm) + 1e-12
            for i, q in enumerate(Q):
                cand = np.flatnonzero(approx[i] <= band[i])
                diff = self.features[cand] - q
                exact = np.einsum("ij,ij->i", diff, diff)
                # cand is ascending, so a stable sort on distance breaks ties by row_id
                out[start + i] = cand[np.argsort(exact, kind="stable")[:k]]
        return out

    def _proba(self, X: np.ndarray) -> np.ndarray:
        return self.labels[self.neighbors(X)].mean(axis=1)

    def to_params(self) -> Dict[str, Any]:
        return {
            "features": self.features.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "row_ids": self.row_ids.tolist(),
        }

    @classmethod
    def from_params(cls, spec: ModelSpec, n_features: int, params: Dict[str, Any]) -> "KnnModel":
        features = np.asarray(params["features"], dtype=np.float64).reshape(-1, n_features)
        return cls(spec, features, np.asarray(params["labels"]), np.asarray(params["row_ids"]))


def knn_fit(ds: Dataset, spec: ModelSpec) -> KnnModel:
    k = spec.hyperparameters["k"]
    if k > ds.n_rows:
        raise HyperparameterError(f"knn: k={k} exceeds the {ds.n_rows} training rows")
    return KnnModel(spec, ds.features, ds.labels, ds.row_ids)
