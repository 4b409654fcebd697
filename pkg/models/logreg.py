"""
Logistic Regression
P(fraud | x) = sigmoid(b + w·x), fit by full-batch gradient descent on the
mean logistic loss plus an L2 penalty on w (the intercept is not penalized).
"""

import logging
from typing import Any, Dict, Tuple

import numpy as np

from engines.dataset import Dataset
from models.base import ModelSpec, TrainedModel, require_both_classes
from utils.helpers import log_loss_from_logits, open_unit_interval, sigmoid

logger = logging.getLogger("fraudlab.models.logreg")


class LogRegModel(TrainedModel):
    family = "logreg"

    def __init__(self, spec: ModelSpec, coefficients: np.ndarray, intercept: float,
                 converged: bool = True, n_iter: int = 0, grad_norm: float = 0.0):
        super().__init__(spec, len(coefficients))
        self.coefficients = np.asarray(coefficients, dtype=np.float64)
        self.intercept = float(intercept)
        self.converged = bool(converged)
        self.n_iter = int(n_iter)
        self.grad_norm = float(grad_norm)

    def _proba(self, X: np.ndarray) -> np.ndarray:
        return open_unit_interval(sigmoid(X @ self.coefficients + self.intercept))

    def to_params(self) -> Dict[str, Any]:
        return {
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_params(cls, spec: ModelSpec, n_features: int, params: Dict[str, Any]) -> "LogRegModel":
        return cls(spec, np.asarray(params["coefficients"]), params["intercept"],
                   params.get("converged", True), params.get("n_iter", 0), params.get("grad_norm", 0.0))


def logistic_loss_and_grad(coefficients: np.ndarray, intercept: float, X: np.ndarray,
                           y: np.ndarray, l2: float) -> Tuple[float, np.ndarray, float]:
    """Mean logistic loss + l2·‖w‖²/2, its gradient in w, and its derivative in b."""
    z = X @ coefficients + intercept
    residual = sigmoid(z) - y
    n = X.shape[0]
    loss = log_loss_from_logits(z, y) + 0.5 * l2 * float(coefficients @ coefficients)
    grad_w = X.T @ residual / n + l2 * coefficients
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def logreg_fit(ds: Dataset, spec: ModelSpec) -> LogRegModel:
    """
    Gradient descent from zero weights. A step that raises the loss is
    retried at half the step size. Stops once the gradient's max-norm is
    at most `tol`; hitting `max_iters` first returns the model with
    `converged=False`.
    """
    require_both_classes(ds, "logreg")
    hp = spec.hyperparameters
    X = ds.features
    y = ds.labels.astype(np.float64)
    l2, tol, lr = hp["l2"], hp["tol"], hp["learning_rate"]

    w = np.zeros(ds.n_features)
    b = 0.0
    loss, grad_w, grad_b = logistic_loss_and_grad(w, b, X, y, l2)
    grad_norm = max(np.max(np.abs(grad_w), initial=0.0), abs(grad_b))
    n_iter = 0

    while grad_norm > tol and n_iter < hp["max_iters"]:
        n_iter += 1
        while True:
            w_new = w - lr * grad_w
            b_new = b - lr * grad_b
            loss_new, gw_new, gb_new = logistic_loss_and_grad(w_new, b_new, X, y, l2)
            if loss_new <= loss or lr < 1e-12:
                break
            lr *= 0.5
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, gw_new, gb_new
        grad_norm = max(np.max(np.abs(grad_w), initial=0.0), abs(grad_b))

    converged = grad_norm <= tol
    if not converged:
        logger.warning(f"Logistic regression stopped at max_iters={hp['max_iters']} (gradient norm {grad_norm:.2e})")
    return LogRegModel(spec, w, b, converged=converged, n_iter=n_iter, grad_norm=grad_norm)
