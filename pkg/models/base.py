"""
Model Contract
One fit / predict-probability interface over the five classifier families,
per-family hyperparameter defaults and validation, and the versioned JSON
model document.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from engines.dataset import Dataset, ScalerParams
from utils.config import MODEL_FAMILIES, MODEL_INFO
from utils.errors import DataError, DataValidationError, HyperparameterError, OutputError, UsageError
from utils.helpers import canonical_json, round_half_up

logger = logging.getLogger("fraudlab.models")

MODEL_FORMAT = "fraudlab-model"
MODEL_VERSION = 1

# ─── Hyperparameters ───

DEFAULT_HYPERPARAMETERS: Dict[str, Dict[str, Any]] = {
    "logreg": {"l2": 1e-4, "max_iters": 2000, "tol": 1e-5, "learning_rate": 1.0},
    "forest": {"n_trees": 100, "max_depth": 12, "min_leaf": 1, "features_per_split": None, "bootstrap": True},
    "gbt": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3, "lambda_l2": 1.0, "min_child_weight": 1.0},
    "knn": {"k": 5},
    "mlp": {
        "layers": [32, 16], "epochs": 15, "batch_size": 256, "val_fraction": 0.15,
        "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8,
    },
}


def _positive_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1


def _non_negative_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 0


def _real(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) and math.isfinite(v)


_RULES: Dict[str, Dict[str, Tuple[Callable[[Any], bool], str]]] = {
    "logreg": {
        "l2": (lambda v: _real(v) and v >= 0, "a real >= 0"),
        "max_iters": (_non_negative_int, "an integer >= 0"),
        "tol": (lambda v: _real(v) and v > 0, "a real > 0"),
        "learning_rate": (lambda v: _real(v) and v > 0, "a real > 0"),
    },
    "forest": {
        "n_trees": (_positive_int, "an integer >= 1"),
        "max_depth": (_non_negative_int, "an integer >= 0"),
        "min_leaf": (_positive_int, "an integer >= 1"),
        "features_per_split": (lambda v: v is None or _positive_int(v), "null or an integer >= 1"),
        "bootstrap": (lambda v: isinstance(v, bool), "true or false"),
    },
    "gbt": {
        "n_rounds": (_non_negative_int, "an integer >= 0"),
        "learning_rate": (lambda v: _real(v) and v > 0, "a real > 0"),
        "max_depth": (_non_negative_int, "an integer >= 0"),
        "lambda_l2": (lambda v: _real(v) and v >= 0, "a real >= 0"),
        "min_child_weight": (lambda v: _real(v) and v >= 0, "a real >= 0"),
    },
    "knn": {
        "k": (_positive_int, "an integer >= 1"),
    },
    "mlp": {
        "layers": (lambda v: isinstance(v, (list, tuple)) and len(v) >= 1 and all(_positive_int(u) for u in v),
                   "a non-empty list of integers >= 1"),
        "epochs": (_non_negative_int, "an integer >= 0"),
        "batch_size": (_positive_int, "an integer >= 1"),
        "val_fraction": (lambda v: _real(v) and 0 <= v < 1, "a real in [0, 1)"),
        "learning_rate": (lambda v: _real(v) and v > 0, "a real > 0"),
        "beta1": (lambda v: _real(v) and 0 <= v < 1, "a real in [0, 1)"),
        "beta2": (lambda v: _real(v) and 0 <= v < 1, "a real in [0, 1)"),
        "epsilon": (lambda v: _real(v) and v > 0, "a real > 0"),
    },
}


@dataclass(frozen=True)
class ModelSpec:
    """Classifier family, its hyperparameters and the training seed."""
    family: str
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> None:
        if self.family not in MODEL_FAMILIES:
            raise UsageError(f"unknown model family {self.family!r}; expected one of {', '.join(MODEL_FAMILIES)}")
        rules = _RULES[self.family]
        for name, value in self.hyperparameters.items():
            if name not in rules:
                raise HyperparameterError(f"{self.family}: unknown hyperparameter {name!r}")
            check, expected = rules[name]
            if not check(value):
                raise HyperparameterError(f"{self.family}: {name} must be {expected}, got {value!r}")

    def with_defaults(self) -> "ModelSpec":
        """Validated copy with every family default filled in."""
        self.validate()
        merged = dict(DEFAULT_HYPERPARAMETERS[self.family])
        merged.update(self.hyperparameters)
        if self.family == "mlp":
            merged["layers"] = [int(u) for u in merged["layers"]]
        return ModelSpec(self.family, merged, int(self.seed))

    def replace(self, **overrides) -> "ModelSpec":
        hyper = dict(self.hyperparameters)
        hyper.update(overrides)
        return ModelSpec(self.family, hyper, self.seed)

    @property
    def display_name(self) -> str:
        return MODEL_INFO[self.family]["name"]

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(data["family"], dict(data.get("hyperparameters", {})), int(data.get("seed", 0)))

    @classmethod
    def from_entry(cls, entry: Dict[str, Any], seed: int) -> "ModelSpec":
        """Config-file model entry `{family: ..., <hyperparameter>: ...}`."""
        entry = dict(entry)
        family = entry.pop("family", None)
        return cls(family, entry, seed).with_defaults()


# ─── Trained models ───

class TrainedModel:
    """Base of every fitted classifier. Subclasses implement `_proba` on a 2-D matrix."""
    family: str = ""

    def __init__(self, spec: ModelSpec, n_features: int):
        self.spec = spec
        self.n_features = int(n_features)

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_params(self) -> Dict[str, Any]:
        raise NotImplementedError

    @classmethod
    def from_params(cls, spec: ModelSpec, n_features: int, params: Dict[str, Any]) -> "TrainedModel":
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(features={self.n_features}, seed={self.spec.seed})"


def _registry() -> Dict[str, Tuple[Callable, type]]:
    from models.gbt import GbtModel, gbt_fit
    from models.knn import KnnModel, knn_fit
    from models.logreg import LogRegModel, logreg_fit
    from models.mlp import MlpModel, mlp_fit
    from models.trees import ForestModel, forest_fit

    return {
        "logreg": (logreg_fit, LogRegModel),
        "forest": (forest_fit, ForestModel),
        "gbt": (gbt_fit, GbtModel),
        "knn": (knn_fit, KnnModel),
        "mlp": (mlp_fit, MlpModel),
    }


def require_both_classes(ds: Dataset, family: str) -> None:
    n0, n1 = ds.class_counts()
    if n0 == 0 or n1 == 0:
        raise DataValidationError(f"{family} training needs both classes, got {n0} non-fraud / {n1} fraud")


def fit_model(spec: ModelSpec, ds: Dataset, threads: int = 1) -> TrainedModel:
    """Fill defaults, validate and fit the spec's family on `ds`."""
    spec = spec.with_defaults()
    fit, _ = _registry()[spec.family]
    started = time.perf_counter()
    if spec.family == "forest":
        model = fit(ds, spec, threads=threads)
    else:
        model = fit(ds, spec)
    logger.info(
        f"Fit {spec.display_name} on {ds.n_rows:,} rows × {ds.n_features} features "
        f"in {time.perf_counter() - started:.2f}s"
    )
    return model


def training_rows_after_carve(ds: Dataset, val_fraction: float) -> int:
    """Rows left for MLP mini-batches once the stratified validation share is removed."""
    return sum(c - round_half_up(c * val_fraction) for c in ds.class_counts())


def adapt_spec_to_rows(spec: ModelSpec, ds_or_rows) -> Tuple[ModelSpec, Optional[str]]:
    """
    Clamp the MLP batch size to the rows actually available for training.
    Returns the (possibly) adjusted spec and a note describing the change.
    Non-MLP specs pass through untouched.
    """
    spec = spec.with_defaults()
    if spec.family != "mlp":
        return spec, None
    hyper = spec.hyperparameters
    if isinstance(ds_or_rows, Dataset):
        available = training_rows_after_carve(ds_or_rows, hyper["val_fraction"])
    else:
        available = int(ds_or_rows) - round_half_up(int(ds_or_rows) * hyper["val_fraction"])
    if available < 1 or hyper["batch_size"] <= available:
        return spec, None
    note = f"batch_size clamped from {hyper['batch_size']} to {available} (training rows after validation carve-out)"
    logger.warning(f"MLP {note}")
    return spec.replace(batch_size=available), note


# ─── Prediction ───

def _as_matrix(model: TrainedModel, x) -> Tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_features:
        got = X.shape[-1] if X.ndim >= 1 else 0
        raise DataValidationError(f"{model.family} model expects {model.n_features} features, got {got}")
    return X, single


def predict_proba(model: TrainedModel, x):
    """Class-1 probability for one feature vector (float) or a matrix of rows (array)."""
    X, single = _as_matrix(model, x)
    proba = model._proba(X)
    return float(proba[0]) if single else proba


def predict(model: TrainedModel, x, threshold: float = 0.5):
    """1 where the class-1 probability is strictly greater than `threshold`, else 0."""
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"threshold must be in [0, 1], got {threshold}")
    proba = predict_proba(model, x)
    if np.isscalar(proba):
        return int(proba > threshold)
    return (proba > threshold).astype(np.int8)


# ─── Model documents ───

def save_model(model: TrainedModel, path: str, scaler: Optional[ScalerParams] = None) -> None:
    """Write the versioned JSON model document, optionally embedding the scaler it expects."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "family": model.family,
        "hyperparameters": model.spec.hyperparameters,
        "seed": model.spec.seed,
        "n_features": model.n_features,
        "parameters": model.to_params(),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "scaler_id": scaler.scaler_id if scaler is not None else None,
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(doc))
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info(f"Saved {model.family} model to {path}")


def load_model(path: str) -> Tuple[TrainedModel, Optional[ScalerParams]]:
    if not os.path.exists(path):
        raise DataError(f"{path}: model file not found")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataValidationError(f"{path}: not a JSON model document ({e})") from e

    if doc.get("format") != MODEL_FORMAT:
        raise DataValidationError(f"{path}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise DataValidationError(f"{path}: unsupported model version {doc.get('version')!r}")

    spec = ModelSpec(doc["family"], doc["hyperparameters"], doc["seed"])
    spec.validate()
    _, cls = _registry()[spec.family]
    model = cls.from_params(spec, doc["n_features"], doc["parameters"])
    scaler = ScalerParams.from_dict(doc["scaler"]) if doc.get("scaler") else None
    return model, scaler
