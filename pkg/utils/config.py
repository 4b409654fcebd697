"""
Fraud Resampling Lab: Core Configuration & Constants
Imbalanced fraud classification: undersampling, SMOTE and hybrid resampling
evaluated on the untouched imbalanced test split.
"""

import os
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple

import yaml
from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.helpers import log_spaced_grid

load_dotenv()

# ─── Dataset Schema (ULB credit card transactions) ───
LABEL_COLUMN = "Class"
ROW_ID_COLUMN = "row_id"
ULB_FEATURES: Tuple[str, ...] = ("Time", *[f"V{i}" for i in range(1, 29)], "Amount")
ULB_COLUMNS: Tuple[str, ...] = (*ULB_FEATURES, LABEL_COLUMN)
DEFAULT_SCALE_COLUMNS: Tuple[str, ...] = ("Time", "Amount")

# SMOTE rows get ids at or above this floor; loaded rows never reach it.
SYNTHETIC_ID_FLOOR = 2 ** 40

# ─── Models ───
MODEL_FAMILIES: Tuple[str, ...] = ("logreg", "forest", "gbt", "knn", "mlp")

MODEL_INFO = {
    "logreg": {
        "name": "Logistic Regression",
        "description": "Sigmoid of a linear score, fit by full-batch gradient descent with L2.",
    },
    "forest": {
        "name": "Random Forest",
        "description": "Bagged CART trees (Gini), soft vote over leaf fraud fractions.",
    },
    "gbt": {
        "name": "XGBoost",
        "description": "Second-order gradient boosted trees on logistic loss with L2 leaf penalty.",
    },
    "knn": {
        "name": "KNN",
        "description": "Fraction of fraud labels among the k nearest training rows (Euclidean).",
    },
    "mlp": {
        "name": "MLP",
        "description": "Two ReLU hidden layers (32, 16) and a sigmoid output, trained with Adam.",
    },
}

# ─── Experiments & Reports ───
EXPERIMENT_NAMES: Tuple[str, ...] = ("baseline", "undersample", "smote", "hybrid")
REPORT_FORMATS: Tuple[str, ...] = ("json", "csv", "markdown", "svg", "html")
SELECTION_CRITERIA: Tuple[str, ...] = ("max_f1", "min_precision_floor", "knee")

# Fraud ratio sweep: 1% to 50%, 20 log-spaced points.
DEFAULT_RATIO_GRID: Tuple[float, ...] = tuple(log_spaced_grid(0.01, 0.50, 20))


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian cluster mixture used when the ULB CSV is not available."""
    n_majority: int = 19900
    n_minority: int = 100
    dimensions: int = 10
    class_separation: float = 3.0
    cluster_count_per_class: int = 2
    seed: int = 7

    def validate(self) -> None:
        if self.n_minority < 0 or self.n_majority < 0:
            raise ConfigError("synthetic class counts must be non-negative")
        if self.n_minority > self.n_majority:
            raise ConfigError(
                f"synthetic n_minority ({self.n_minority}) exceeds n_majority ({self.n_majority})"
            )
        if self.dimensions < 1:
            raise ConfigError("synthetic dimensions must be >= 1")
        if self.class_separation < 0:
            raise ConfigError("synthetic class_separation must be >= 0")
        if self.cluster_count_per_class < 1:
            raise ConfigError("synthetic cluster_count_per_class must be >= 1")


@dataclass
class SweepSettings:
    """Fraud-ratio sweep used by the hybrid experiment."""
    ratios: List[float] = field(default_factory=lambda: list(DEFAULT_RATIO_GRID))
    criterion: str = "max_f1"
    paper_protocol: bool = False        # sweep against the test split instead of a validation carve-out
    validation_fraction: float = 0.2
    multiplier: float = 10.0            # SMOTE target = multiplier × current fraud count


@dataclass
class AppConfig:
    """Process-level defaults taken from the environment (.env supported)."""
    output_dir: str = field(default_factory=lambda: os.getenv("FRAUDLAB_OUTPUT_DIR", "output"))
    log_level: str = field(default_factory=lambda: os.getenv("FRAUDLAB_LOG_LEVEL", "INFO"))
    threads: int = field(default_factory=lambda: int(os.getenv("FRAUDLAB_THREADS", "1")))
    data_path: Optional[str] = field(default_factory=lambda: os.getenv("FRAUDLAB_DATA") or None)


def default_models() -> List[Dict[str, Any]]:
    return [{"family": family} for family in MODEL_FAMILIES]


@dataclass
class ExperimentConfig:
    """Everything an experiment run depends on; snapshotted into the manifest."""
    data_path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    split_fraction: float = 0.25
    seed: int = 42
    models: List[Dict[str, Any]] = field(default_factory=default_models)
    smote_k: int = 5
    threshold: float = 0.5
    scale_columns: Optional[List[str]] = None   # None → Time/Amount when present, else every column
    sweep: SweepSettings = field(default_factory=SweepSettings)
    output_dir: str = field(default_factory=lambda: AppConfig().output_dir)
    formats: List[str] = field(default_factory=lambda: ["json", "csv", "markdown", "svg"])
    threads: int = field(default_factory=lambda: AppConfig().threads)

    def validate(self) -> None:
        if self.data_path and self.synthetic is not None:
            raise ConfigError("both data_path and synthetic are set; choose one dataset source")
        if not self.data_path and self.synthetic is None:
            raise ConfigError("no dataset source: set data_path or a synthetic section")
        if self.synthetic is not None:
            self.synthetic.validate()
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.smote_k < 1:
            raise ConfigError(f"smote_k must be >= 1, got {self.smote_k}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not self.models:
            raise ConfigError("model list is empty")
        families = [entry.get("family") for entry in self.models]
        for family in families:
            if family not in MODEL_FAMILIES:
                raise ConfigError(f"unknown model family: {family!r}")
        if len(set(families)) != len(families):
            raise ConfigError("each model family may appear only once in the model list")
        if not self.sweep.ratios:
            raise ConfigError("sweep ratio grid is empty")
        for ratio in self.sweep.ratios:
            if not 0.0 < ratio <= 0.5:
                raise ConfigError(f"sweep ratio {ratio} outside (0, 0.5]")
        if not 0.0 < self.sweep.validation_fraction < 1.0:
            raise ConfigError("sweep validation_fraction must be in (0, 1)")
        if self.sweep.multiplier < 1.0:
            raise ConfigError(f"sweep multiplier must be >= 1, got {self.sweep.multiplier}")
        if self.sweep.criterion.split(":")[0] not in SELECTION_CRITERIA:
            raise ConfigError(f"unknown selection criterion: {self.sweep.criterion!r}")
        for fmt in self.formats:
            if fmt not in REPORT_FORMATS:
                raise ConfigError(f"unknown report format: {fmt!r}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["synthetic"] = asdict(self.synthetic) if self.synthetic is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")

        synthetic = data.pop("synthetic", None)
        sweep = data.pop("sweep", None) or {}
        sweep_unknown = sorted(set(sweep) - set(SweepSettings.__dataclass_fields__))
        if sweep_unknown:
            raise ConfigError(f"unknown sweep keys: {sweep_unknown}")
        if synthetic is not None:
            synth_unknown = sorted(set(synthetic) - set(SyntheticSpec.__dataclass_fields__))
            if synth_unknown:
                raise ConfigError(f"unknown synthetic keys: {synth_unknown}")
            synthetic = SyntheticSpec(**synthetic)

        config = cls(synthetic=synthetic, sweep=SweepSettings(**sweep), **data)
        if config.models:
            config.models = [dict(m) for m in config.models]
        return config


def load_experiment_config(path: str) -> ExperimentConfig:
    """Read a YAML experiment config (flat keys plus `synthetic`, `sweep`, `models` sections)."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping at the top level")
    return ExperimentConfig.from_dict(raw)


# ─── Tooltips & Help Text ───
TOOLTIPS = {
    "seed": "Master seed; split, samplers and every model get their own stream derived from it.",
    "split": "Fraction of rows held out as the test split (stratified except in the undersampling pool).",
    "ratio": "Target fraud fraction of a hybrid-resampled training set, in (0, 0.5].",
    "multiplier": "Hybrid SMOTE step grows the fraud count by this factor before undersampling.",
    "k": "Neighbours used by SMOTE interpolation (resample) or by the KNN classifier (train).",
    "threshold": "A row is flagged as fraud when its predicted probability is strictly greater than this.",
    "paper_protocol": "Sweep fraud ratios against the test split instead of a validation carve-out (optimistic).",
    "threads": "Worker cap for trees, models and sweep points; 1 reproduces parallel results exactly.",
}
