"""
Metrics Engine
Confusion matrices and per-class accuracy / precision / recall / F1.
A metric whose denominator is zero is reported as 0 and named in the
report's `degenerate` list.
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from engines.dataset import Dataset
from models.base import TrainedModel, predict, predict_proba
from utils.config import MODEL_INFO
from utils.errors import DataValidationError
from utils.helpers import fmt_number

logger = logging.getLogger("fraudlab.metrics")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int
    positive: int = 1

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def flipped(self) -> "ConfusionMatrix":
        """The same predictions seen with the other class as positive."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp, positive=1 - self.positive)

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


def confusion(y_true: Sequence[int], y_pred: Sequence[int], positive: int = 1) -> ConfusionMatrix:
    truth = np.asarray(y_true)
    pred = np.asarray(y_pred)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise DataValidationError(f"label length mismatch: {truth.shape} truth vs {pred.shape} predicted")
    for name, arr in (("truth", truth), ("predicted", pred)):
        if not np.isin(arr, (0, 1)).all():
            raise DataValidationError(f"{name} labels must be 0 or 1")
    if positive not in (0, 1):
        raise DataValidationError(f"positive class must be 0 or 1, got {positive}")
    t, p = truth == positive, pred == positive
    return ConfusionMatrix(
        tp=int(np.sum(t & p)),
        tn=int(np.sum(~t & ~p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
        positive=positive,
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total)


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1(cm: ConfusionMatrix) -> float:
    # 2PR/(P+R) reduced to counts
    return _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)


def degenerate_metrics(cm: ConfusionMatrix) -> Tuple[str, ...]:
    flags = []
    if cm.total == 0:
        flags.append("accuracy")
    if cm.tp + cm.fp == 0:
        flags.append("precision")
    if cm.tp + cm.fn == 0:
        flags.append("recall")
    if 2 * cm.tp + cm.fp + cm.fn == 0:
        flags.append("f1")
    return tuple(flags)


@dataclass(frozen=True)
class ClassReport:
    positive_class: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    support: int
    degenerate: Tuple[str, ...] = ()

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "ClassReport":
        return cls(
            positive_class=cm.positive,
            precision=precision(cm),
            recall=recall(cm),
            f1=f1(cm),
            accuracy=accuracy(cm),
            support=cm.tp + cm.fn,
            degenerate=degenerate_metrics(cm),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["degenerate"] = list(self.degenerate)
        return data


@dataclass
class EvalReport:
    """Both classes' metrics for one model on one evaluation split."""
    model: str
    split: str
    threshold: float
    confusion: ConfusionMatrix
    class_1: ClassReport
    class_0: ClassReport
    dataset: Dict[str, Any]
    model_spec: Dict[str, Any] = field(default_factory=dict)
    sampling: Optional[Dict[str, Any]] = None
    notes: Tuple[str, ...] = ()

    @property
    def frauds_detected(self) -> int:
        return self.confusion.tp

    @property
    def frauds_missed(self) -> int:
        return self.confusion.fn

    @property
    def display_name(self) -> str:
        return MODEL_INFO.get(self.model, {}).get("name", self.model)

    def comparison_row(self) -> Dict[str, str]:
        """Model, Precision, Recall, F1-Score, Accuracy for class 1, four decimals."""
        return {
            "Model": self.display_name,
            "Precision": fmt_number(self.class_1.precision),
            "Recall": fmt_number(self.class_1.recall),
            "F1-Score": fmt_number(self.class_1.f1),
            "Accuracy": fmt_number(self.class_1.accuracy),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "split": self.split,
            "threshold": self.threshold,
            "confusion": self.confusion.to_dict(),
            "class_1": self.class_1.to_dict(),
            "class_0": self.class_0.to_dict(),
            "frauds_detected": self.frauds_detected,
            "frauds_missed": self.frauds_missed,
            "dataset": self.dataset,
            "model_spec": self.model_spec,
            "sampling": self.sampling,
            "notes": list(self.notes),
        }


def evaluate(model: TrainedModel, ds: Dataset, threshold: float = 0.5, split: str = "test",
             sampling: Optional[Dict[str, Any]] = None, notes: Sequence[str] = ()) -> EvalReport:
    """Score `model` on every row of `ds`; the report carries the dataset fingerprint and provenance."""
    if ds.n_rows == 0:
        raise DataValidationError("cannot evaluate on an empty dataset")
    y_pred = predict(model, ds.features, threshold)
    cm = confusion(ds.labels, y_pred, positive=1)
    report = EvalReport(
        model=model.family,
        split=split,
        threshold=threshold,
        confusion=cm,
        class_1=ClassReport.from_confusion(cm),
        class_0=ClassReport.from_confusion(cm.flipped()),
        dataset=ds.fingerprint(),
        model_spec=model.spec.to_dict(),
        sampling=sampling,
        notes=tuple(notes),
    )
    logger.info(
        f"{report.display_name} on {split} ({ds.n_rows:,} rows): precision {report.class_1.precision:.4f}, "
        f"recall {report.class_1.recall:.4f}, F1 {report.class_1.f1:.4f} "
        f"({cm.tp} of {cm.tp + cm.fn} frauds caught)"
    )
    return report


def scores(model: TrainedModel, ds: Dataset):
    """Class-1 probabilities for every row of `ds`, in row order."""
    return predict_proba(model, ds.features)


def relative_change(before: float, after: float) -> Optional[float]:
    """(after − before) / before, or None when before is 0."""
    if before == 0:
        return None
    return (after - before) / before
