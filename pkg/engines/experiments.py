"""
Experiment Engine
Runs the four imbalance-handling experiments end to end: split, scale on the
training rows, resample the training rows only, fit every configured model
and evaluate it on the untouched imbalanced test split.

    baseline     models fit on the imbalanced training split
    undersample  1:1 pool, evaluated on the pool's test split and on an imbalanced test split
    smote        training split SMOTE'd to 1:1, evaluated on imbalanced and SMOTE-balanced tests
    hybrid       per-model fraud-ratio sweep, then SMOTE + undersampling at the chosen ratio
"""

import logging
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from engines.dataset import (
    Dataset, ScalerParams, apply_scaler, class_distribution_table, fit_robust_scaler,
    generate_synthetic, load_csv, random_split, resolve_scale_columns, stratified_split,
)
from engines.metrics import EvalReport, evaluate
from engines.resampling import (
    RatioSweepResult, ResamplePlan, hybrid, ratio_sweep, select_ratio, smote, undersample,
)
from models.base import ModelSpec, adapt_spec_to_rows, fit_model
from utils.config import EXPERIMENT_NAMES, ExperimentConfig
from utils.errors import LeakageError, UsageError
from utils.helpers import derive_seed, fmt_change, fmt_count, fmt_number, round_half_up, validate_config_ranges

logger = logging.getLogger("fraudlab.experiments")

ORIGINAL_TEST = "original_test"
BALANCED_TEST = "balanced_test"
VALIDATION = "validation"

METRIC_COLUMNS = ("Precision", "Recall", "F1-Score", "Accuracy")

# Settings that change where or how fast a run goes, never what it produces.
EXECUTION_KEYS = ("threads", "output_dir")


class ExperimentResult:
    """Evaluation reports, sweeps and dataset tables of one experiment run."""

    def __init__(self, name: str, config: ExperimentConfig):
        self.name = name
        self.config_snapshot: Dict = {
            k: v for k, v in config.to_dict().items() if k not in EXECUTION_KEYS
        }
        self.reports: List[EvalReport] = []
        self.sweeps: Dict[str, RatioSweepResult] = {}
        self.selected_ratios: Dict[str, float] = {}
        self.distribution: pd.DataFrame = pd.DataFrame()
        self.comparison: List[Dict[str, str]] = []
        self.timings: Dict[str, float] = {}

    @property
    def models(self) -> List[str]:
        seen = []
        for r in self.reports:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    @property
    def splits(self) -> List[str]:
        seen = []
        for r in self.reports:
            if r.split not in seen:
                seen.append(r.split)
        return seen

    def reports_for(self, model: Optional[str] = None, split: Optional[str] = None) -> List[EvalReport]:
        return [
            r for r in self.reports
            if (model is None or r.model == model) and (split is None or r.split == split)
        ]

    def summary_table(self, split: str) -> pd.DataFrame:
        """Model, Precision, Recall, F1-Score, Accuracy (class 1) for every model on `split`."""
        rows = [r.comparison_row() for r in self.reports_for(split=split)]
        return pd.DataFrame(rows, columns=["Model", *METRIC_COLUMNS])

    def to_dict(self) -> Dict:
        return {
            "experiment": self.name,
            "reports": [r.to_dict() for r in self.reports],
            "selected_ratios": dict(self.selected_ratios),
            "comparison": list(self.comparison),
            "config": self.config_snapshot,
        }

    def summary(self) -> str:
        lines = ["═" * 64, f"  EXPERIMENT: {self.name.upper()}", "═" * 64]
        for split in self.splits:
            lines.append(f"  [{split}]")
            lines.append(f"  {'Model':<22}{'Precision':>10}{'Recall':>10}{'F1-Score':>10}{'Accuracy':>10}")
            for r in self.reports_for(split=split):
                c = r.class_1
                lines.append(
                    f"  {r.display_name:<22}{fmt_number(c.precision):>10}{fmt_number(c.recall):>10}"
                    f"{fmt_number(c.f1):>10}{fmt_number(c.accuracy):>10}"
                )
        for model, ratio in self.selected_ratios.items():
            lines.append(f"  Selected fraud ratio for {model}: {ratio:g}")
        if self.comparison:
            lines.append("  Baseline → hybrid (class 1):")
            for row in self.comparison:
                lines.append(
                    f"    {row['Model']:<22}{row['Metric']:<10} {row['Baseline']} → {row['Hybrid']} ({row['Change']})"
                )
        lines.append("═" * 64)
        return "\n".join(lines)


# ─── Leakage guards ───

def assert_disjoint(train: Dataset, eval_ds: Dataset) -> None:
    shared = np.intersect1d(train.original_ids(), eval_ds.original_ids())
    if shared.size:
        raise LeakageError(f"{shared.size} training row(s) appear in the evaluation set (first id {shared[0]})")


def assert_no_synthetic(eval_ds: Dataset) -> None:
    if not eval_ds.original_mask().all():
        raise LeakageError("synthetic SMOTE rows found in an original-test evaluation set")


def assert_scaler_provenance(scaler: ScalerParams, train: Dataset) -> None:
    if scaler.fitted_on != train.id_hash():
        raise LeakageError("scaler was not fit on exactly the training rows")


# ─── Shared steps ───

def load_source(config: ExperimentConfig) -> Dataset:
    if config.data_path:
        return load_csv(config.data_path)
    return generate_synthetic(config.synthetic)


def model_specs(config: ExperimentConfig) -> List[ModelSpec]:
    """One spec per configured model; each seed derives from the master seed and the family name."""
    return [
        ModelSpec.from_entry(entry, derive_seed(config.seed, "model", entry["family"]))
        for entry in config.models
    ]


def _scale(config: ExperimentConfig, train: Dataset, *others: Dataset) -> Tuple[ScalerParams, List[Dataset]]:
    scaler = fit_robust_scaler(train, resolve_scale_columns(train, config.scale_columns))
    assert_scaler_provenance(scaler, train)
    return scaler, [apply_scaler(ds, scaler) for ds in (train, *others)]


def _fit_and_evaluate(spec: ModelSpec, train: Dataset, evals: Sequence[Tuple[str, Dataset]],
                      threshold: float, sampling: Optional[Dict]) -> List[EvalReport]:
    spec, note = adapt_spec_to_rows(spec, train)
    model = fit_model(spec, train)
    notes = [note] if note else []
    return [evaluate(model, ds, threshold, split=split, sampling=sampling, notes=notes) for split, ds in evals]


def _train_all(specs: Sequence[ModelSpec], train: Dataset, evals: Sequence[Tuple[str, Dataset]],
               config: ExperimentConfig, sampling: Optional[Dict] = None) -> List[EvalReport]:
    for split, ds in evals:
        assert_disjoint(train, ds)
        if split != BALANCED_TEST:
            assert_no_synthetic(ds)
    per_model = Parallel(n_jobs=min(config.threads, len(specs)), prefer="threads")(
        delayed(_fit_and_evaluate)(spec, train, evals, config.threshold, sampling) for spec in specs
    )
    return [report for reports in per_model for report in reports]


def _master_split(ds: Dataset, config: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    return stratified_split(ds, config.split_fraction, derive_seed(config.seed, "split"))


# ─── Experiments ───

def run_baseline(config: ExperimentConfig, ds: Optional[Dataset] = None) -> ExperimentResult:
    """All models on the unmodified (imbalanced) training split."""
    result = ExperimentResult("baseline", config)
    ds = ds if ds is not None else load_source(config)
    train, test = _master_split(ds, config)
    _, (train, test) = _scale(config, train, test)

    result.distribution = class_distribution_table({"Original Train": train, "Original Test": test})
    result.reports = _train_all(model_specs(config), train, [(ORIGINAL_TEST, test)], config)
    return result


def imbalanced_test_for_pool(ds: Dataset, pool: Dataset, pool_test: Dataset,
                             test_fraction: float, seed: int) -> Dataset:
    """
    pool_test plus a uniform draw of non-pool non-fraud rows, so the result
    holds round(non-fraud total × test_fraction) non-fraud rows and every
    pool_test fraud row. No other pool row can enter it.
    """
    n_majority, _ = ds.class_counts()
    wanted = round_half_up(n_majority * test_fraction)
    have = pool_test.class_counts()[0]
    outside = np.setdiff1d(ds.row_ids[ds.labels == 0], pool.row_ids)
    extra = max(0, min(wanted - have, outside.size))
    rng = np.random.default_rng(seed)
    drawn = outside[rng.permutation(outside.size)[:extra]]
    return ds.select(np.concatenate([pool_test.row_ids, drawn]))


def run_undersampling(config: ExperimentConfig, ds: Optional[Dataset] = None) -> ExperimentResult:
    """1:1 pool split at random; every model scored on the pool's test split and on an imbalanced test split."""
    result = ExperimentResult("undersample", config)
    ds = ds if ds is not None else load_source(config)
    n_majority, n_minority = ds.class_counts()

    plan = ResamplePlan.undersample(n_minority, seed=derive_seed(config.seed, "undersample"))
    pool = undersample(ds, plan.target_majority, plan.seed)
    pool_train, pool_test = random_split(pool, config.split_fraction, derive_seed(config.seed, "split"))
    imbalanced = imbalanced_test_for_pool(
        ds, pool, pool_test, config.split_fraction, derive_seed(config.seed, "undersample", "test")
    )
    _, (pool_train, pool_test, imbalanced) = _scale(config, pool_train, pool_test, imbalanced)

    result.distribution = class_distribution_table({
        "Original Dataset": ds,
        "Undersampled Pool": pool,
        "Undersampled Train": pool_train,
        "Undersampled Test": pool_test,
        "Original Test": imbalanced,
    })
    evals = [(BALANCED_TEST, pool_test), (ORIGINAL_TEST, imbalanced)]
    result.reports = _train_all(model_specs(config), pool_train, evals, config, sampling=plan.to_dict())
    return result


def run_smote(config: ExperimentConfig, ds: Optional[Dataset] = None) -> ExperimentResult:
    """
    SMOTE on the training split only. A SMOTE-balanced copy of the test
    partition (built from test rows alone) is scored alongside the
    imbalanced test split.
    """
    result = ExperimentResult("smote", config)
    ds = ds if ds is not None else load_source(config)
    train, test = _master_split(ds, config)
    _, (train, test) = _scale(config, train, test)

    train_major, _ = train.class_counts()
    test_major, _ = test.class_counts()
    plan = ResamplePlan.smote(train_major, k=config.smote_k, seed=derive_seed(config.seed, "smote", "train"))
    smote_train = smote(train, plan.target_minority, plan.smote_k, plan.seed)
    balanced_test = smote(test, test_major, config.smote_k, derive_seed(config.seed, "smote", "test"))

    result.distribution = class_distribution_table({
        "Original Train": train,
        "Original Test": test,
        "SMOTE Train": smote_train,
        "SMOTE Test": balanced_test,
    })
    evals = [(ORIGINAL_TEST, test), (BALANCED_TEST, balanced_test)]
    result.reports = _train_all(model_specs(config), smote_train, evals, config, sampling=plan.to_dict())
    return result


def sweep_for_model(spec: ModelSpec, train: Dataset, test: Dataset,
                    config: ExperimentConfig) -> Tuple[RatioSweepResult, float]:
    """Sweep fraud ratios for one model and select one by the configured criterion."""
    sweep_cfg = config.sweep
    if sweep_cfg.paper_protocol:
        sweep_train, sweep_eval, eval_split = train, test, ORIGINAL_TEST
    else:
        sweep_train, sweep_eval = stratified_split(
            train, sweep_cfg.validation_fraction, derive_seed(config.seed, "validation")
        )
        eval_split = VALIDATION

    sweep = ratio_sweep(
        sweep_train, sweep_cfg.ratios, spec, sweep_eval,
        multiplier=sweep_cfg.multiplier,
        seed=derive_seed(config.seed, "sweep", spec.family),
        smote_k=config.smote_k,
        threshold=config.threshold,
        threads=config.threads,
        eval_split=eval_split,
    )
    ratio = select_ratio(sweep, sweep_cfg.criterion)
    logger.info(f"{spec.display_name}: selected fraud ratio {ratio:g} on {eval_split}")
    return sweep, ratio


def _hybrid_for_model(spec: ModelSpec, train: Dataset, test: Dataset,
                      config: ExperimentConfig) -> Tuple[RatioSweepResult, float, Dataset, EvalReport]:
    sweep_cfg = config.sweep
    sweep, ratio = sweep_for_model(spec, train, test, config)
    plan = ResamplePlan.hybrid(ratio, sweep_cfg.multiplier, config.smote_k,
                               seed=derive_seed(config.seed, "hybrid", spec.family))
    hybrid_train = hybrid(train, plan.fraud_ratio, plan.minority_multiplier, plan.smote_k, plan.seed)
    (report,) = _train_all([spec], hybrid_train, [(ORIGINAL_TEST, test)], config, sampling=plan.to_dict())
    return sweep, ratio, hybrid_train, report


def comparison_rows(baseline: Sequence[EvalReport], tuned: Sequence[EvalReport]) -> List[Dict[str, str]]:
    """Per model and class-1 metric: Baseline, Hybrid and the relative change."""
    by_model = {r.model: r for r in baseline}
    rows = []
    for after in tuned:
        before = by_model.get(after.model)
        if before is None:
            continue
        for metric, attr in zip(METRIC_COLUMNS, ("precision", "recall", "f1", "accuracy")):
            b, a = getattr(before.class_1, attr), getattr(after.class_1, attr)
            rows.append({
                "Model": after.display_name,
                "Metric": metric,
                "Baseline": fmt_number(b),
                "Hybrid": fmt_number(a),
                "Change": fmt_change(b, a),
            })
    return rows


def run_hybrid(config: ExperimentConfig, ds: Optional[Dataset] = None) -> ExperimentResult:
    """
    Per model: sweep training fraud ratios (on a validation carve-out of the
    training split, or on the test split with `paper_protocol`), pick one,
    rebuild the hybrid training set at that ratio and score on the test split.
    Baseline models are fit too, for the before/after comparison.
    """
    result = ExperimentResult("hybrid", config)
    ds = ds if ds is not None else load_source(config)
    train, test = _master_split(ds, config)
    _, (train, test) = _scale(config, train, test)
    specs = model_specs(config)

    baseline = _train_all(specs, train, [(ORIGINAL_TEST, test)], config)
    tables = {"Original Train": train, "Original Test": test}
    tuned = []
    for spec in specs:
        sweep, ratio, hybrid_train, report = _hybrid_for_model(spec, train, test, config)
        result.sweeps[spec.family] = sweep
        result.selected_ratios[spec.family] = ratio
        tables[f"Hybrid Train ({spec.display_name})"] = hybrid_train
        tuned.append(report)

    result.reports = tuned
    result.comparison = comparison_rows(baseline, tuned)
    result.distribution = class_distribution_table(tables)
    return result


def run_sweep(config: ExperimentConfig, family: str, ds: Optional[Dataset] = None) -> ExperimentResult:
    """The hybrid experiment's sweep and ratio selection for one model, without the final fit."""
    result = ExperimentResult("sweep", config)
    ds = ds if ds is not None else load_source(config)
    train, test = _master_split(ds, config)
    _, (train, test) = _scale(config, train, test)
    specs = [s for s in model_specs(config) if s.family == family]
    if not specs:
        raise UsageError(f"model {family!r} is not in the configured model list")
    sweep, ratio = sweep_for_model(specs[0], train, test, config)
    result.sweeps[family] = sweep
    result.selected_ratios[family] = ratio
    result.distribution = class_distribution_table({"Original Train": train, "Original Test": test})
    return result


EXPERIMENTS: Dict[str, Callable[..., ExperimentResult]] = {
    "baseline": run_baseline,
    "undersample": run_undersampling,
    "smote": run_smote,
    "hybrid": run_hybrid,
}


def run_experiment(name: str, config: ExperimentConfig, ds: Optional[Dataset] = None) -> ExperimentResult:
    """Validate the config, log range warnings and run one named experiment."""
    if name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENT_NAMES)}")
    config.validate()
    for warning in validate_config_ranges(config):
        logger.warning(warning)

    started = time.perf_counter()
    result = EXPERIMENTS[name](config, ds)
    result.timings["total_seconds"] = time.perf_counter() - started
    logger.info(
        f"Experiment {name} finished in {result.timings['total_seconds']:.1f}s "
        f"({fmt_count(len(result.reports))} evaluation reports)"
    )
    return result
