"""
Resampling Engine
Changes a training Dataset's class balance by random undersampling, SMOTE
interpolation, or a ratio-targeted hybrid of both, and sweeps the hybrid
fraud ratio against a held-out evaluation set.

Label 0 (non-fraud) is the majority class and label 1 (fraud) the minority
throughout. Every sampler is a pure function of (dataset, targets, seed) and
orders its work by row_id, so the input's row order never changes the result.
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from engines.dataset import Dataset, PROVENANCE_COLUMNS
from utils.config import SYNTHETIC_ID_FLOOR
from utils.errors import InfeasiblePlanError, LeakageError, SelectionError, UsageError
from utils.helpers import derive_seed, round_half_up

logger = logging.getLogger("fraudlab.resampling")

PLAN_KINDS = ("undersample", "smote", "hybrid")
DEFAULT_SMOTE_K = 5
_DISTANCE_BLOCK = 4_000_000     # max floats materialised per neighbour-search block


@dataclass(frozen=True)
class ResamplePlan:
    """Declarative resampling request; only the fields of its kind are set."""
    kind: str
    target_majority: Optional[int] = None
    target_minority: Optional[int] = None
    fraud_ratio: Optional[float] = None
    minority_multiplier: Optional[float] = None
    smote_k: Optional[int] = None
    seed: int = 0

    @classmethod
    def undersample(cls, target_majority: int, seed: int = 0) -> "ResamplePlan":
        return cls("undersample", target_majority=int(target_majority), seed=seed)

    @classmethod
    def smote(cls, target_minority: int, k: int = DEFAULT_SMOTE_K, seed: int = 0) -> "ResamplePlan":
        return cls("smote", target_minority=int(target_minority), smote_k=int(k), seed=seed)

    @classmethod
    def hybrid(cls, fraud_ratio: float, minority_multiplier: float = 10.0,
               k: int = DEFAULT_SMOTE_K, seed: int = 0) -> "ResamplePlan":
        return cls("hybrid", fraud_ratio=float(fraud_ratio),
                   minority_multiplier=float(minority_multiplier), smote_k=int(k), seed=seed)

    def validate(self) -> None:
        relevant = {
            "undersample": {"target_majority"},
            "smote": {"target_minority", "smote_k"},
            "hybrid": {"fraud_ratio", "minority_multiplier", "smote_k"},
        }
        if self.kind not in relevant:
            raise UsageError(f"unknown resampling kind {self.kind!r}; expected one of {PLAN_KINDS}")
        optional = ("target_majority", "target_minority", "fraud_ratio", "minority_multiplier", "smote_k")
        for name in optional:
            is_set = getattr(self, name) is not None
            if is_set != (name in relevant[self.kind]):
                state = "missing" if not is_set else "not allowed"
                raise UsageError(f"{self.kind} plan: field {name!r} {state}")
        if self.smote_k is not None and self.smote_k < 1:
            raise UsageError(f"smote_k must be >= 1, got {self.smote_k}")
        if self.fraud_ratio is not None and not 0.0 < self.fraud_ratio <= 0.5:
            raise UsageError(f"fraud_ratio must be in (0, 0.5], got {self.fraud_ratio}")
        if self.minority_multiplier is not None and self.minority_multiplier < 1.0:
            raise UsageError(f"minority_multiplier must be >= 1, got {self.minority_multiplier}")

    def to_dict(self) -> Dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Dict) -> "ResamplePlan":
        plan = cls(**data)
        plan.validate()
        return plan


# ─── Undersampling ───

def undersample(ds: Dataset, target_majority: int, seed: int) -> Dataset:
    """Keep every fraud row and a seeded uniform subset of exactly `target_majority` non-fraud rows."""
    n_majority, n_minority = ds.class_counts()
    if target_majority < 0:
        raise InfeasiblePlanError(f"undersample target must be >= 0, got {target_majority}")
    if target_majority > n_majority:
        raise InfeasiblePlanError(
            f"undersample target {target_majority:,} exceeds the {n_majority:,} available non-fraud rows"
        )
    rng = np.random.default_rng(seed)
    majority_ids = np.sort(ds.row_ids[ds.labels == 0])
    kept = majority_ids[rng.permutation(n_majority)[:target_majority]]
    minority_ids = ds.row_ids[ds.labels == 1]
    out = ds.select(np.concatenate([kept, minority_ids]))
    logger.info(f"Undersampled non-fraud {n_majority:,} → {target_majority:,} (fraud {n_minority:,} kept)")
    return out


# ─── SMOTE ───

def minority_neighbors(points: np.ndarray, k: int) -> np.ndarray:
    """
    Indices of each point's k nearest other points (Euclidean, exhaustive).
    Distance ties go to the lower index; callers order points by row_id.
    """
    m, d = points.shape
    block = max(1, _DISTANCE_BLOCK // max(1, m * d))
    neighbors = np.empty((m, k), dtype=np.int64)
    for start in range(0, m, block):
        stop = min(m, start + block)
        diff = points[start:stop, None, :] - points[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        dist2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        neighbors[start:stop] = np.argsort(dist2, axis=1, kind="stable")[:, :k]
    return neighbors


def smote(ds: Dataset, target_minority: int, k: int, seed: int) -> Dataset:
    """
    Grow the fraud class to `target_minority` rows by convex interpolation.

    Each synthetic row is x + u·(x_nn − x) for a fraud row x, one of its k
    nearest fraud neighbours x_nn and u ~ U[0, 1]. Base rows are visited
    round-robin in a seeded order, so per-base synthetic counts differ by at
    most one. Synthetic rows get fresh ids and a provenance record
    (row_id, base_id, neighbor_id, u).
    """
    n_majority, n_minority = ds.class_counts()
    if target_minority < n_minority:
        raise InfeasiblePlanError(
            f"SMOTE target {target_minority:,} is below the current fraud count {n_minority:,}"
        )
    n_new = target_minority - n_minority
    if n_new == 0:
        return ds
    if n_minority < 2:
        raise InfeasiblePlanError(f"SMOTE needs at least 2 fraud rows, found {n_minority}")
    if not 1 <= k <= n_minority - 1:
        raise InfeasiblePlanError(f"SMOTE k={k} out of range [1, {n_minority - 1}] for {n_minority} fraud rows")

    minority = ds.select(ds.row_ids[ds.labels == 1])
    points, ids = minority.features, minority.row_ids
    neighbors = minority_neighbors(points, k)

    rng = np.random.default_rng(seed)
    base = rng.permutation(n_minority)[np.arange(n_new) % n_minority]
    chosen = neighbors[base, rng.integers(0, k, size=n_new)]
    u = rng.random(n_new)
    synthetic = points[base] + u[:, None] * (points[chosen] - points[base])

    first_id = max(SYNTHETIC_ID_FLOOR, int(ds.row_ids.max()) + 1)
    new_ids = np.arange(first_id, first_id + n_new, dtype=np.int64)
    provenance = pd.DataFrame(
        {"row_id": new_ids, "base_id": ids[base], "neighbor_id": ids[chosen], "u": u},
        columns=PROVENANCE_COLUMNS,
    )
    added = Dataset(
        features=synthetic,
        labels=np.ones(n_new, dtype=np.int8),
        feature_names=ds.feature_names,
        row_ids=new_ids,
        smote_provenance=provenance,
    )
    out = ds.canonical().concat(added)
    logger.info(f"SMOTE (k={k}) fraud {n_minority:,} → {target_minority:,} ({n_new:,} synthetic)")
    return out


# ─── Hybrid ───

def hybrid_targets(n_minority: int, fraud_ratio: float, minority_multiplier: float) -> Tuple[int, int]:
    """(fraud target, non-fraud target) of a hybrid plan."""
    minority = round_half_up(minority_multiplier * n_minority)
    majority = round_half_up(minority * (1.0 - fraud_ratio) / fraud_ratio)
    return minority, majority


def hybrid(ds: Dataset, fraud_ratio: float, minority_multiplier: float,
           smote_k: int, seed: int) -> Dataset:
    """SMOTE the fraud class to multiplier × its size, then undersample non-fraud to hit `fraud_ratio`."""
    if not 0.0 < fraud_ratio <= 0.5:
        raise InfeasiblePlanError(f"fraud_ratio must be in (0, 0.5], got {fraud_ratio}")
    if minority_multiplier < 1.0:
        raise InfeasiblePlanError(f"minority_multiplier must be >= 1, got {minority_multiplier}")

    n_majority, n_minority = ds.class_counts()
    minority_target, majority_target = hybrid_targets(n_minority, fraud_ratio, minority_multiplier)
    if majority_target > n_majority:
        raise InfeasiblePlanError(
            f"fraud ratio {fraud_ratio:g} with multiplier {minority_multiplier:g} needs "
            f"{majority_target:,} non-fraud rows but only {n_majority:,} are available; "
            f"use a smaller --multiplier or a larger --ratio"
        )
    oversampled = smote(ds, minority_target, smote_k, derive_seed(seed, "hybrid", "smote"))
    return undersample(oversampled, majority_target, derive_seed(seed, "hybrid", "undersample"))


# ─── Plans ───

def apply_plan(ds: Dataset, plan: ResamplePlan) -> Dataset:
    plan.validate()
    if plan.kind == "undersample":
        return undersample(ds, plan.target_majority, plan.seed)
    if plan.kind == "smote":
        return smote(ds, plan.target_minority, plan.smote_k, plan.seed)
    return hybrid(ds, plan.fraud_ratio, plan.minority_multiplier, plan.smote_k, plan.seed)


def planned_counts(ds: Dataset, plan: ResamplePlan) -> Tuple[int, int]:
    """Class counts a plan would produce, computed without resampling."""
    plan.validate()
    n_majority, n_minority = ds.class_counts()
    if plan.kind == "undersample":
        return plan.target_majority, n_minority
    if plan.kind == "smote":
        return n_majority, plan.target_minority
    minority, majority = hybrid_targets(n_minority, plan.fraud_ratio, plan.minority_multiplier)
    return majority, minority


# ─── Fraud-ratio sweep ───

@dataclass
class SweepPoint:
    ratio: float
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    n_minority: Optional[int] = None
    n_majority: Optional[int] = None
    skipped_reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.skipped_reason is None


@dataclass
class RatioSweepResult:
    """Class-1 precision/recall/F1 per training fraud ratio."""
    model: str
    multiplier: float
    seed: int
    eval_split: str
    points: List[SweepPoint] = field(default_factory=list)

    def successful_points(self) -> List[SweepPoint]:
        return [p for p in self.points if p.ok]

    def to_frame(self) -> pd.DataFrame:
        columns = ["ratio", "precision", "recall", "f1", "n_minority", "n_majority", "skipped_reason"]
        return pd.DataFrame([asdict(p) for p in self.points], columns=columns)

    def to_dict(self) -> Dict:
        return {
            "model": self.model,
            "multiplier": self.multiplier,
            "seed": self.seed,
            "eval_split": self.eval_split,
            "points": [asdict(p) for p in self.points],
        }


def ratio_seed(seed: int, ratio: float) -> int:
    """Per-ratio stream, so a point never depends on which other ratios are swept."""
    return derive_seed(seed, "ratio", f"{ratio:.10g}")


def _sweep_point(train: Dataset, ratio: float, spec, eval_ds: Dataset, multiplier: float,
                 seed: int, smote_k: int, threshold: float, eval_split: str) -> SweepPoint:
    from engines.metrics import evaluate
    from models.base import adapt_spec_to_rows, fit_model

    try:
        resampled = hybrid(train, ratio, multiplier, smote_k, ratio_seed(seed, ratio))
    except InfeasiblePlanError as e:
        logger.warning(f"Sweep ratio {ratio:g} skipped: {e}")
        return SweepPoint(ratio=ratio, skipped_reason=str(e))

    fitted_spec, _ = adapt_spec_to_rows(spec, resampled.n_rows)
    model = fit_model(fitted_spec, resampled)
    report = evaluate(model, eval_ds, threshold, split=eval_split)
    n_majority, n_minority = resampled.class_counts()
    cls = report.class_1
    logger.info(
        f"Sweep {spec.family} ratio {ratio:g}: precision {cls.precision:.4f} "
        f"recall {cls.recall:.4f} F1 {cls.f1:.4f}"
    )
    return SweepPoint(
        ratio=ratio, precision=cls.precision, recall=cls.recall, f1=cls.f1,
        n_minority=n_minority, n_majority=n_majority,
    )


def ratio_sweep(train: Dataset, ratios: Sequence[float], model, eval_ds: Dataset,
                multiplier: float, seed: int, smote_k: int = DEFAULT_SMOTE_K,
                threshold: float = 0.5, threads: int = 1,
                eval_split: str = "validation") -> RatioSweepResult:
    """
    For each fraud ratio: hybrid-resample `train`, fit `model` (a ModelSpec),
    score class 1 on `eval_ds`. The evaluation set is never resampled.
    Infeasible ratios are recorded as skipped and the sweep continues.
    """
    if not ratios:
        raise UsageError("ratio sweep needs at least one ratio")
    for ratio in ratios:
        if not 0.0 < ratio <= 0.5:
            raise UsageError(f"sweep ratio {ratio} outside (0, 0.5]")
    shared = np.intersect1d(train.original_ids(), eval_ds.original_ids())
    if shared.size:
        raise LeakageError(f"sweep evaluation set shares {shared.size} row(s) with the training set")

    ordered = sorted(set(float(r) for r in ratios))
    points = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_sweep_point)(train, ratio, model, eval_ds, multiplier, seed, smote_k, threshold, eval_split)
        for ratio in ordered
    )
    return RatioSweepResult(model=model.family, multiplier=multiplier, seed=seed,
                            eval_split=eval_split, points=list(points))


# ─── Ratio selection ───

def parse_criterion(criterion: Union[str, Tuple[str, float]]) -> Tuple[str, Optional[float]]:
    """'max_f1' | 'min_precision_floor:<p>' | ('min_precision_floor', p) | 'knee'."""
    if isinstance(criterion, tuple):
        name, value = criterion
        return name, float(value)
    name, _, value = criterion.partition(":")
    if name == "min_precision_floor":
        if not value:
            raise UsageError("min_precision_floor needs a floor, e.g. min_precision_floor:0.8")
        return name, float(value)
    return name, None


def select_ratio(sweep: RatioSweepResult, criterion: Union[str, Tuple[str, float]] = "max_f1") -> float:
    """Pick the training fraud ratio from a sweep; ties go to the smaller ratio."""
    name, floor = parse_criterion(criterion)
    if name == "knee":
        raise SelectionError("the 'knee' selection criterion is not supported; use max_f1 or min_precision_floor:<p>")
    if name not in ("max_f1", "min_precision_floor"):
        raise UsageError(f"unknown selection criterion {name!r}")

    points = sorted(sweep.successful_points(), key=lambda p: p.ratio)
    if not points:
        raise SelectionError(f"sweep for {sweep.model} has no successful points")

    if name == "max_f1":
        best = points[0]
        for p in points[1:]:
            if p.f1 > best.f1:
                best = p
        return best.ratio

    eligible = [p for p in points if p.precision >= floor]
    if not eligible:
        raise SelectionError(f"no sweep point for {sweep.model} reaches the precision floor {floor:g}")
    best = eligible[0]
    for p in eligible[1:]:
        if p.recall > best.recall:
            best = p
    return best.ratio
