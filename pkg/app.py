"""
Fraud Resampling Lab: Command-Line Entry Point
================================================
Every pipeline stage as a subcommand, with CSV between stages:

  inspect     class distribution of a dataset and the planned resampling panels
  resample    undersample / SMOTE / hybrid a CSV and write the result as CSV
  train       fit one classifier (robust scaler embedded) and write the model JSON
  evaluate    score a saved model on a labeled CSV and write reports
  experiment  run baseline | undersample | smote | hybrid | all and write reports
  sweep       fraud-ratio sweep for one model (CSV + SVG curve)

Exit codes: 0 success, 2 usage, 3 data/schema/I-O, 4 infeasible plan, 5 internal.

Run with:
    python app.py experiment hybrid --synthetic --out output
"""

# ─────────────────────────────────────────────────────────────────────────────────
# Standard library & third-party imports
# ─────────────────────────────────────────────────────────────────────────────────
import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
import yaml

from engines.dataset import (
    Dataset, apply_scaler, class_distribution_table, fit_robust_scaler, resolve_scale_columns, save_csv,
)
from engines.experiments import ExperimentResult, load_source, run_experiment, run_sweep
from engines.metrics import evaluate
from engines.reports import emit_reports, validate_output_dir
from engines.resampling import ResamplePlan, apply_plan, planned_counts
from models.base import ModelSpec, fit_model, load_model, save_model
from utils.config import (
    AppConfig, EXPERIMENT_NAMES, ExperimentConfig, MODEL_FAMILIES, REPORT_FORMATS, SyntheticSpec,
    TOOLTIPS, load_experiment_config,
)
from utils.errors import FraudLabError, OutputError, UsageError
from utils.helpers import derive_seed, fmt_count, fmt_pct

logger = logging.getLogger("fraudlab.cli")

SYNTHETIC_KEYS = {
    "n_majority": "n_majority",
    "n_minority": "n_minority",
    "dimensions": "dimensions",
    "separation": "class_separation",
    "clusters": "cluster_count_per_class",
    "seed": "seed",
}


# ─────────────────────────────────────────────────────────────────────────────────
# Argument parsing
# ─────────────────────────────────────────────────────────────────────────────────

def _source_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("dataset & run")
    g.add_argument("--config", help="YAML experiment config; command-line flags override its values")
    g.add_argument("--data", help="Labeled CSV (Time, V1..V28, Amount, Class or x1..xd, Class). "
                                  "Default: $FRAUDLAB_DATA")
    g.add_argument("--synthetic", nargs="?", const="", metavar="KEY=VALUE,...",
                   help="Generate a Gaussian-cluster dataset instead of reading --data; keys: "
                        + ", ".join(SYNTHETIC_KEYS))
    g.add_argument("--seed", type=int, help=TOOLTIPS["seed"] + " Default 42.")
    g.add_argument("--split", type=float, help=TOOLTIPS["split"] + " Default 0.25.")
    g.add_argument("--threads", type=int, help=TOOLTIPS["threads"] + " Default: $FRAUDLAB_THREADS or 1.")
    g.add_argument("-v", "--verbose", action="store_true", help="Log debug detail")
    g.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")
    return p


def _output_flags(default_formats: str = "json,csv,markdown,svg") -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("output")
    g.add_argument("--out", help="Output directory. Default: $FRAUDLAB_OUTPUT_DIR or ./output")
    g.add_argument("--format", help=f"Comma-separated report formats from {', '.join(REPORT_FORMATS)}; "
                                    f"empty writes only the manifest. Default {default_formats}")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraudlab",
        description="Imbalanced fraud classification: resampling, five classifiers, reproducible experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    source = _source_flags()

    p = sub.add_parser("inspect", parents=[source], help="Class distribution and planned resampling panels")
    p.add_argument("--ratio", type=float, default=0.02, help="Hybrid fraud ratio for the planned panel (default 0.02)")
    p.add_argument("--multiplier", type=float, help=TOOLTIPS["multiplier"] + " Default 10.")
    p.add_argument("--out", help="Also write the distribution table to this CSV path")

    p = sub.add_parser("resample", parents=[source], help="Resample a dataset and write it as CSV")
    p.add_argument("--plan", required=True, choices=["undersample", "smote", "hybrid"], help="Resampling method")
    p.add_argument("--target", type=int, help="Non-fraud target (undersample) or fraud target (smote); "
                                              "default balances the classes 1:1")
    p.add_argument("--ratio", type=float, help=TOOLTIPS["ratio"] + " Required for --plan hybrid.")
    p.add_argument("--multiplier", type=float, help=TOOLTIPS["multiplier"] + " Default 10.")
    p.add_argument("--k", type=int, help="SMOTE neighbours (default 5)")
    p.add_argument("--out", required=True, help="Output CSV path (row_id column kept for provenance)")

    p = sub.add_parser("train", parents=[source], help="Fit one classifier and write the model JSON")
    p.add_argument("--model", required=True, choices=MODEL_FAMILIES, help="Classifier family")
    p.add_argument("--k", type=int, help="Neighbours for --model knn (default 5)")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                   help="Hyperparameter override, repeatable (e.g. --param n_trees=50)")
    p.add_argument("--threshold", type=float, help=TOOLTIPS["threshold"] + " Used for the logged training metrics.")
    p.add_argument("--out", required=True, help="Output model JSON path")

    p = sub.add_parser("evaluate", parents=[source, _output_flags()], help="Score a saved model on a labeled dataset")
    p.add_argument("model_path", help="Model JSON written by `train`")
    p.add_argument("--threshold", type=float, help=TOOLTIPS["threshold"] + " Default 0.5.")

    p = sub.add_parser("experiment", parents=[source, _output_flags()], help="Run a canned experiment")
    p.add_argument("name", choices=[*EXPERIMENT_NAMES, "all"], help="Experiment to run")
    p.add_argument("--model", help="Comma-separated model families (default: all five)")
    p.add_argument("--k", type=int, help="SMOTE neighbours (default 5)")
    p.add_argument("--multiplier", type=float, help=TOOLTIPS["multiplier"] + " Default 10.")
    p.add_argument("--threshold", type=float, help=TOOLTIPS["threshold"] + " Default 0.5.")
    p.add_argument("--criterion", help="Ratio selection: max_f1 or min_precision_floor:<p> (default max_f1)")
    p.add_argument("--paper-protocol", action="store_true", help=TOOLTIPS["paper_protocol"])

    p = sub.add_parser("sweep", parents=[source, _output_flags("csv,svg")], help="Fraud-ratio sweep for one model")
    p.add_argument("--model", required=True, choices=MODEL_FAMILIES, help="Classifier family")
    p.add_argument("--k", type=int, help="SMOTE neighbours (default 5)")
    p.add_argument("--multiplier", type=float, help=TOOLTIPS["multiplier"] + " Default 10.")
    p.add_argument("--threshold", type=float, help=TOOLTIPS["threshold"] + " Default 0.5.")
    p.add_argument("--criterion", help="Ratio selection: max_f1 or min_precision_floor:<p> (default max_f1)")
    p.add_argument("--paper-protocol", action="store_true", help=TOOLTIPS["paper_protocol"])
    return parser


# ─────────────────────────────────────────────────────────────────────────────────
# Configuration assembly (flag > config file > environment > default)
# ─────────────────────────────────────────────────────────────────────────────────

def parse_synthetic(text: str, base: Optional[SyntheticSpec] = None) -> SyntheticSpec:
    values = dict(vars(base)) if base is not None else {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        key, sep, raw = item.partition("=")
        if not sep or key.strip() not in SYNTHETIC_KEYS:
            raise UsageError(f"--synthetic: expected KEY=VALUE with KEY in {', '.join(SYNTHETIC_KEYS)}, got {item!r}")
        field_name = SYNTHETIC_KEYS[key.strip()]
        try:
            values[field_name] = float(raw) if field_name == "class_separation" else int(raw)
        except ValueError:
            raise UsageError(f"--synthetic: {key.strip()} must be a number, got {raw!r}") from None
    spec = SyntheticSpec(**values)
    spec.validate()
    return spec


def parse_params(items: Sequence[str]) -> Dict[str, Any]:
    params = {}
    for item in items:
        name, sep, raw = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"--param expects NAME=VALUE, got {item!r}")
        params[name.strip()] = yaml.safe_load(raw)
    return params


def parse_formats(text: Optional[str], default: Sequence[str]) -> List[str]:
    if text is None:
        return list(default)
    formats = [f.strip() for f in text.split(",") if f.strip()]
    unknown = [f for f in formats if f not in REPORT_FORMATS]
    if unknown:
        raise UsageError(f"--format: unknown format(s) {', '.join(unknown)}; choose from {', '.join(REPORT_FORMATS)}")
    return formats


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config) if args.config else ExperimentConfig()

    if args.data and args.synthetic is not None:
        raise UsageError("--data and --synthetic are mutually exclusive; pass one dataset source")
    if args.data:
        config.data_path, config.synthetic = args.data, None
    elif args.synthetic is not None:
        config.data_path, config.synthetic = None, parse_synthetic(args.synthetic, config.synthetic)
    elif not config.data_path and config.synthetic is None:
        env_data = AppConfig().data_path
        if not env_data:
            raise UsageError("no dataset: pass --data PATH or --synthetic (or set FRAUDLAB_DATA)")
        config.data_path = env_data

    for flag, attr in (("seed", "seed"), ("split", "split_fraction"), ("threads", "threads"),
                       ("threshold", "threshold")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attr, value)
    if getattr(args, "multiplier", None) is not None:
        config.sweep.multiplier = args.multiplier
    if getattr(args, "criterion", None):
        config.sweep.criterion = args.criterion
    if getattr(args, "paper_protocol", False):
        config.sweep.paper_protocol = True
    if getattr(args, "out", None) and args.command in ("evaluate", "experiment", "sweep"):
        config.output_dir = args.out
    if args.command in ("experiment", "sweep") and getattr(args, "k", None) is not None:
        config.smote_k = args.k
    if args.command == "experiment" and args.model:
        families = [f.strip() for f in args.model.split(",") if f.strip()]
        by_family = {m["family"]: m for m in config.models}
        config.models = [by_family.get(f, {"family": f}) for f in families]
    if hasattr(args, "format"):
        default = ["csv", "svg"] if args.command == "sweep" else config.formats
        config.formats = parse_formats(args.format, default)

    config.validate()
    return config


def configure_logging(args: argparse.Namespace) -> None:
    level = AppConfig().log_level.upper()
    if args.verbose:
        level = "DEBUG"
    elif args.quiet:
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


# ─────────────────────────────────────────────────────────────────────────────────
# Subcommands
# ─────────────────────────────────────────────────────────────────────────────────

def write_table(df: pd.DataFrame, path: str) -> None:
    try:
        df.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e


def planned_distribution(ds: Dataset, ratio: float, multiplier: float) -> pd.DataFrame:
    """Original, 1:1 undersampled, 1:1 SMOTE and hybrid class counts, computed arithmetically."""
    n0, n1 = ds.class_counts()
    rows = [("Original", n0, n1)]
    panels = [
        ("Undersampled (1:1)", ResamplePlan.undersample(n1)),
        ("SMOTE (1:1)", ResamplePlan.smote(n0)),
        (f"Hybrid (ratio {ratio:g}, ×{multiplier:g})", ResamplePlan.hybrid(ratio, multiplier)),
    ]
    for label, plan in panels:
        majority, minority = planned_counts(ds, plan)
        rows.append((label, majority, minority) if majority <= n0 else (label + " infeasible", None, None))
    df = pd.DataFrame(rows, columns=["Subset", "Class 0 (Non-Fraud)", "Class 1 (Fraud)"])
    counts = ["Class 0 (Non-Fraud)", "Class 1 (Fraud)"]
    df[counts] = df[counts].astype("Int64")
    total = df["Class 0 (Non-Fraud)"] + df["Class 1 (Fraud)"]
    df["Fraud Fraction"] = (df["Class 1 (Fraud)"] / total).round(6)
    return df


def cmd_inspect(args: argparse.Namespace) -> int:
    config = build_config(args)
    ds = load_source(config)
    n0, n1 = ds.class_counts()
    multiplier = args.multiplier if args.multiplier is not None else config.sweep.multiplier
    if not 0.0 < args.ratio <= 0.5:
        raise UsageError(f"--ratio must be in (0, 0.5], got {args.ratio}")

    lines = ["═" * 60, "  DATASET"]
    if config.synthetic is not None:
        lines.append(f"  Source:        synthetic {vars(config.synthetic)}")
    else:
        lines.append(f"  Source:        {config.data_path}")
    lines += [
        f"  Rows:          {fmt_count(ds.n_rows)} × {ds.n_features} features",
        f"  Non-fraud:     {fmt_count(n0)}",
        f"  Fraud:         {fmt_count(n1)} ({fmt_pct(ds.fraud_fraction, 3)})",
        "═" * 60,
    ]
    table = planned_distribution(ds, args.ratio, multiplier)
    print("\n".join(lines))
    print(table.to_string(index=False))
    if args.out:
        write_table(table, args.out)
        logger.info(f"Wrote class distribution to {args.out}")
    return 0


def cmd_resample(args: argparse.Namespace) -> int:
    config = build_config(args)
    ds = load_source(config)
    n0, n1 = ds.class_counts()
    k = args.k if args.k is not None else config.smote_k
    multiplier = args.multiplier if args.multiplier is not None else config.sweep.multiplier

    if args.plan == "undersample":
        plan = ResamplePlan.undersample(args.target if args.target is not None else n1, seed=config.seed)
    elif args.plan == "smote":
        plan = ResamplePlan.smote(args.target if args.target is not None else n0, k=k, seed=config.seed)
    else:
        if args.ratio is None:
            raise UsageError("--plan hybrid needs --ratio")
        if args.target is not None:
            raise UsageError("--target does not apply to --plan hybrid; use --ratio and --multiplier")
        plan = ResamplePlan.hybrid(args.ratio, multiplier, k=k, seed=config.seed)

    out = apply_plan(ds, plan)
    save_csv(out, args.out)
    if out.smote_provenance is not None:
        provenance_path = os.path.splitext(args.out)[0] + ".provenance.csv"
        write_table(out.smote_provenance, provenance_path)
    m0, m1 = out.class_counts()
    print(f"{args.plan}: {fmt_count(n0)} / {fmt_count(n1)} → {fmt_count(m0)} / {fmt_count(m1)} (non-fraud / fraud)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    hyper = parse_params(args.param)
    if args.k is not None:
        if args.model != "knn":
            raise UsageError("--k applies to --model knn only; use --param for other families")
        hyper["k"] = args.k
    spec = ModelSpec(args.model, hyper, derive_seed(config.seed, "model", args.model)).with_defaults()

    ds = load_source(config)
    scaler = fit_robust_scaler(ds, resolve_scale_columns(ds, config.scale_columns))
    scaled = apply_scaler(ds, scaler)
    model = fit_model(spec, scaled, threads=config.threads)
    save_model(model, args.out, scaler)

    report = evaluate(model, scaled, config.threshold, split="train")
    print(f"{report.display_name}: training accuracy {report.class_1.accuracy:.4f}, "
          f"fraud recall {report.class_1.recall:.4f} → {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = build_config(args)
    validate_output_dir(config.output_dir)
    model, scaler = load_model(args.model_path)
    ds = load_source(config)
    if scaler is not None:
        ds = apply_scaler(ds, scaler)

    report = evaluate(model, ds, config.threshold, split="test")
    result = ExperimentResult("evaluate", config)
    result.reports = [report]
    result.distribution = class_distribution_table({"Evaluation": ds})
    emit_reports(result, config.output_dir, config.formats)
    print(result.summary())
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    config = build_config(args)
    validate_output_dir(config.output_dir)
    names = list(EXPERIMENT_NAMES) if args.name == "all" else [args.name]
    ds = load_source(config)
    results = [run_experiment(name, config, ds) for name in names]
    emit_reports(results, config.output_dir, config.formats)
    for result in results:
        print(result.summary())
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.model not in [m["family"] for m in config.models]:
        config.models = [*config.models, {"family": args.model}]
    validate_output_dir(config.output_dir)
    result = run_sweep(config, args.model)
    emit_reports(result, config.output_dir, config.formats)
    sweep = result.sweeps[args.model]
    print(sweep.to_frame().to_string(index=False))
    print(f"Selected fraud ratio: {result.selected_ratios[args.model]:g}")
    return 0


COMMANDS = {
    "inspect": cmd_inspect,
    "resample": cmd_resample,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except FraudLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:  # noqa: BLE001
        logger.exception("internal error")
        print(f"error: internal: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
