"""
Multilayer Perceptron
ReLU hidden layers (default 32 → 16) and a single sigmoid output, trained on
binary cross-entropy with Adam. A stratified share of the training rows is
held out to record a validation loss per epoch; training always runs the
configured number of epochs.
"""

import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from engines.dataset import Dataset
from models.base import ModelSpec, TrainedModel, require_both_classes
from utils.errors import HyperparameterError, TrainingDivergedError
from utils.helpers import log_loss_from_logits, make_rng, open_unit_interval, round_half_up, sigmoid

logger = logging.getLogger("fraudlab.models.mlp")

Params = List[Tuple[np.ndarray, np.ndarray]]


def init_params(layer_sizes: List[int], rng: np.random.Generator) -> Params:
    """He-normal weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def forward(params: Params, X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Output logits plus each layer's input activations and pre-activations."""
    activations, pre = [X], []
    a = X
    for i, (W, b) in enumerate(params):
        z = a @ W + b
        pre.append(z)
        if i < len(params) - 1:
            a = np.maximum(z, 0.0)
            activations.append(a)
    return pre[-1][:, 0], activations, pre


def mlp_loss_and_grads(params: Params, X: np.ndarray, y: np.ndarray) -> Tuple[float, Params]:
    """Mean binary cross-entropy and its gradient for every (W, b)."""
    logits, activations, pre = forward(params, X)
    loss = log_loss_from_logits(logits, y)
    delta = ((sigmoid(logits) - y) / X.shape[0])[:, None]
    grads: Params = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (activations[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * (pre[i - 1] > 0)
    return loss, grads


class MlpModel(TrainedModel):
    family = "mlp"

    def __init__(self, spec: ModelSpec, params: Params, history: Optional[List[Dict[str, float]]] = None):
        super().__init__(spec, params[0][0].shape[0])
        self.params = params
        self.history = list(history or [])

    @property
    def activations(self) -> List[str]:
        return ["relu"] * (len(self.params) - 1) + ["sigmoid"]

    def _proba(self, X: np.ndarray) -> np.ndarray:
        logits, _, _ = forward(self.params, X)
        return open_unit_interval(sigmoid(logits))

    def to_params(self) -> Dict[str, Any]:
        return {
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params],
            "activations": self.activations,
            "history": self.history,
        }

    @classmethod
    def from_params(cls, spec: ModelSpec, n_features: int, params: Dict[str, Any]) -> "MlpModel":
        layers = [
            (np.asarray(layer["W"], dtype=np.float64), np.asarray(layer["b"], dtype=np.float64))
            for layer in params["layers"]
        ]
        return cls(spec, layers, params.get("history"))


def stratified_holdout(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(train positions, validation positions) with round(count × fraction) of each class held out."""
    val = []
    for label in (0, 1):
        pos = np.flatnonzero(labels == label)
        k = round_half_up(pos.size * fraction)
        val.append(pos[rng.permutation(pos.size)[:k]])
    val = np.sort(np.concatenate(val))
    train = np.setdiff1d(np.arange(labels.size), val)
    return train, val


class _Adam:
    def __init__(self, params: Params, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.t = 0

    def step(self, params: Params, grads: Params) -> Params:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        updated = []
        for i, (param, grad) in enumerate(zip(params, grads)):
            new_pair, m_pair, v_pair = [], [], []
            for p, g, m, v in zip(param, grad, self.m[i], self.v[i]):
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                new_pair.append(p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
                m_pair.append(m)
                v_pair.append(v)
            updated.append(tuple(new_pair))
            self.m[i], self.v[i] = tuple(m_pair), tuple(v_pair)
        return updated


def mlp_fit(ds: Dataset, spec: ModelSpec) -> MlpModel:
    """
    Holds out `val_fraction` of each class, then trains for `epochs` passes
    of shuffled mini-batches. `batch_size` may not exceed the rows left
    after the hold-out.
    """
    require_both_classes(ds, "mlp")
    hp = spec.hyperparameters
    X = ds.features
    y = ds.labels.astype(np.float64)

    train_pos, val_pos = stratified_holdout(ds.labels, hp["val_fraction"], make_rng(spec.seed, "mlp", "holdout"))
    if hp["batch_size"] > train_pos.size:
        raise HyperparameterError(
            f"mlp: batch_size {hp['batch_size']} exceeds the {train_pos.size} training rows "
            f"left after the validation hold-out"
        )
    X_train, y_train = X[train_pos], y[train_pos]
    X_val, y_val = X[val_pos], y[val_pos]

    sizes = [ds.n_features, *hp["layers"], 1]
    params = init_params(sizes, make_rng(spec.seed, "mlp", "init"))
    shuffle_rng = make_rng(spec.seed, "mlp", "shuffle")
    optimizer = _Adam(params, hp["learning_rate"], hp["beta1"], hp["beta2"], hp["epsilon"])
    batch = hp["batch_size"]
    history = []

    for epoch in range(1, hp["epochs"] + 1):
        order = shuffle_rng.permutation(train_pos.size)
        for b, start in enumerate(range(0, order.size, batch), start=1):
            idx = order[start:start + batch]
            loss, grads = mlp_loss_and_grads(params, X_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"mlp: non-finite loss at epoch {epoch}, batch {b}")
            params = optimizer.step(params, grads)

        train_loss = log_loss_from_logits(forward(params, X_train)[0], y_train)
        val_loss = log_loss_from_logits(forward(params, X_val)[0], y_val) if val_pos.size else None
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug(f"MLP epoch {epoch}: train loss {train_loss:.5f}, validation loss {val_loss}")

    return MlpModel(spec, params, history)
