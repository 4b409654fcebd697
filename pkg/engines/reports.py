"""
Report Writer
Turns ExperimentResults into files:

    reports/<experiment>/<model>.json|csv|md|svg   every evaluation of one model
    reports/<experiment>/summary.md|csv            class-1 table per evaluation split
    reports/<experiment>/class_distribution.csv    datasets used, by class
    reports/<experiment>/comparison.md|csv         baseline vs hybrid (hybrid only)
    sweeps/<model>.csv|svg                         fraud-ratio sweep curves
    charts/*.html                                  interactive plotly charts ("html" format)
    manifest.json                                  every artifact with sha256 and size

Nothing written here carries a timestamp or timing, so identical runs give
identical bytes.
"""

import logging
import math
import os
from typing import Dict, Iterable, List, Optional, Sequence

import pandas as pd
import plotly.graph_objects as go

from engines.experiments import ExperimentResult
from engines.resampling import RatioSweepResult
from utils.config import MODEL_INFO, REPORT_FORMATS
from utils.errors import OutputError, UsageError
from utils.helpers import canonical_json, fmt_number, sha256_file

logger = logging.getLogger("fraudlab.reports")

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "fraudlab-manifest"
SUMMARY_COLUMNS = ["Model", "Precision", "Recall", "F1-Score", "Accuracy"]

PLOTLY_THEME = dict(
    template="plotly_white",
    paper_bgcolor="#FFFFFF",
    plot_bgcolor="#FFFFFF",
    font_color="#1E293B",
)
SERIES_COLORS = {"precision": "#2563EB", "recall": "#DC2626", "f1": "#16A34A", "accuracy": "#9333EA"}
METRIC_TRACES = [("Precision", "precision"), ("Recall", "recall"), ("F1", "f1"), ("Accuracy", "accuracy")]


# ─── Output directory ───

def validate_output_dir(path: str) -> None:
    """Create `path` if needed and prove it is writable; run before any training."""
    probe = os.path.join(path, ".fraudlab-write-probe")
    try:
        os.makedirs(path, exist_ok=True)
        with open(probe, "w", encoding="utf-8") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as e:
        raise OutputError(f"output directory {path!r} is not writable: {e.strerror or e}") from e


def _write_text(root: str, rel: str, text: str, written: List[str]) -> None:
    path = os.path.join(root, rel)
    try:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    written.append(rel)


def _csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, lineterminator="\n")


def markdown_table(df: pd.DataFrame) -> str:
    """Pipe table with the frame's column order."""
    header = "| " + " | ".join(str(c) for c in df.columns) + " |"
    rule = "|" + "|".join("---" for _ in df.columns) + "|"
    body = ["| " + " | ".join(str(v) for v in row) + " |" for row in df.itertuples(index=False)]
    return "\n".join([header, rule, *body]) + "\n"


# ─── Per-model reports ───

def model_frame(result: ExperimentResult, model: str) -> pd.DataFrame:
    rows = []
    for r in result.reports_for(model=model):
        for cls in (r.class_1, r.class_0):
            rows.append({
                "split": r.split,
                "class": cls.positive_class,
                "precision": cls.precision,
                "recall": cls.recall,
                "f1": cls.f1,
                "accuracy": cls.accuracy,
                "support": cls.support,
                "tp": r.confusion.tp,
                "fp": r.confusion.fp,
                "fn": r.confusion.fn,
                "tn": r.confusion.tn,
                "degenerate": ";".join(cls.degenerate),
            })
    return pd.DataFrame(rows)


def model_document(result: ExperimentResult, model: str) -> Dict:
    sweep = result.sweeps.get(model)
    return {
        "experiment": result.name,
        "model": model,
        "display_name": MODEL_INFO[model]["name"],
        "reports": [r.to_dict() for r in result.reports_for(model=model)],
        "selected_ratio": result.selected_ratios.get(model),
        "sweep": sweep.to_dict() if sweep is not None else None,
    }


def model_markdown(result: ExperimentResult, model: str) -> str:
    name = MODEL_INFO[model]["name"]
    lines = [f"# {name}: {result.name}", ""]
    if model in result.selected_ratios:
        lines += [f"Selected training fraud ratio: {result.selected_ratios[model]:g}", ""]
    for r in result.reports_for(model=model):
        lines += [f"## {r.split}", ""]
        frame = pd.DataFrame(
            [
                {"Class": c.positive_class, "Precision": fmt_number(c.precision), "Recall": fmt_number(c.recall),
                 "F1-Score": fmt_number(c.f1), "Accuracy": fmt_number(c.accuracy), "Support": c.support}
                for c in (r.class_1, r.class_0)
            ]
        )
        lines.append(markdown_table(frame))
        lines.append(
            f"Frauds detected: {r.frauds_detected} · missed: {r.frauds_missed} · "
            f"rows: {r.dataset['rows']} · threshold: {r.threshold:g}"
        )
        for note in r.notes:
            lines.append(f"Note: {note}")
        lines.append("")
    return "\n".join(lines)


_SVG_HEAD = (
    '<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
    'font-family="sans-serif" font-size="12">\n'
    '<rect width="{w}" height="{h}" fill="#FFFFFF"/>\n'
    '<text x="{tx}" y="20" text-anchor="middle" font-size="14">{title}</text>\n'
)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def model_svg(result: ExperimentResult, model: str) -> str:
    """Grouped bars of class-1 precision, recall, F1 and accuracy per evaluation split."""
    reports = result.reports_for(model=model)
    metrics = ("precision", "recall", "f1", "accuracy")
    w, h, left, bottom, top = 120 + 200 * max(1, len(reports)), 360, 60, 300, 40
    parts = [_SVG_HEAD.format(w=w, h=h, tx=w // 2, title=_escape(f"{MODEL_INFO[model]['name']}: {result.name}"))]
    parts.append(f'<line x1="{left}" y1="{bottom}" x2="{w - 20}" y2="{bottom}" stroke="#334155"/>\n')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = bottom - tick * (bottom - top)
        parts.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{tick:.2f}</text>\n')
        parts.append(f'<line x1="{left}" y1="{y:.2f}" x2="{w - 20}" y2="{y:.2f}" stroke="#E2E8F0"/>\n')
    for g, r in enumerate(reports):
        x0 = left + 20 + g * 200
        for m, metric in enumerate(metrics):
            value = getattr(r.class_1, metric)
            bar_h = value * (bottom - top)
            parts.append(
                f'<rect x="{x0 + m * 40}" y="{bottom - bar_h:.2f}" width="32" height="{bar_h:.2f}" '
                f'fill="{SERIES_COLORS[metric]}"><title>{metric} {value:.4f}</title></rect>\n'
            )
        parts.append(f'<text x="{x0 + 76}" y="{bottom + 18}" text-anchor="middle">{_escape(r.split)}</text>\n')
    for m, metric in enumerate(metrics):
        parts.append(
            f'<text x="{left + 20 + m * 90}" y="{h - 12}" fill="{SERIES_COLORS[metric]}">{metric}</text>\n'
        )
    parts.append("</svg>\n")
    return "".join(parts)


# ─── Sweeps ───

def sweep_svg(sweep: RatioSweepResult, selected: Optional[float] = None) -> str:
    """Precision / recall / F1 against training fraud ratio, log-scaled x axis."""
    w, h = 640, 400
    left, right, top, bottom = 60, 600, 40, 340
    points = sweep.successful_points()
    ratios = [p.ratio for p in sweep.points] or [0.01, 0.5]
    lo, hi = math.log(min(ratios)), math.log(max(ratios))
    span = (hi - lo) or 1.0

    def px(ratio: float) -> float:
        return left + (math.log(ratio) - lo) / span * (right - left)

    def py(value: float) -> float:
        return bottom - value * (bottom - top)

    title = f"{MODEL_INFO[sweep.model]['name']}: fraud-ratio sweep ({sweep.eval_split})"
    parts = [_SVG_HEAD.format(w=w, h=h, tx=w // 2, title=_escape(title))]
    parts.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="#334155"/>\n')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#334155"/>\n')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{left - 8}" y="{py(tick) + 4:.2f}" text-anchor="end">{tick:.2f}</text>\n')
    for ratio in sorted(set((min(ratios), max(ratios), *(r for r in (0.02, 0.05, 0.1, 0.2) if min(ratios) < r < max(ratios))))):
        parts.append(f'<text x="{px(ratio):.2f}" y="{bottom + 18}" text-anchor="middle">{ratio:g}</text>\n')
    parts.append(f'<text x="{(left + right) // 2}" y="{h - 12}" text-anchor="middle">Training fraud ratio</text>\n')
    parts.append(
        f'<text x="16" y="{(top + bottom) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + bottom) // 2})">Class-1 score</text>\n'
    )
    if selected is not None:
        parts.append(
            f'<line x1="{px(selected):.2f}" y1="{top}" x2="{px(selected):.2f}" y2="{bottom}" '
            f'stroke="#64748B" stroke-dasharray="4 4"/>\n'
        )
    for i, metric in enumerate(("precision", "recall", "f1")):
        coords = " ".join(f"{px(p.ratio):.2f},{py(getattr(p, metric)):.2f}" for p in points)
        parts.append(f'<polyline fill="none" stroke="{SERIES_COLORS[metric]}" stroke-width="2" points="{coords}"/>\n')
        parts.append(f'<text x="{right - 80}" y="{top + 16 + 16 * i}" fill="{SERIES_COLORS[metric]}">{metric}</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)


# ─── Plotly charts ───

def _write_figure(root: str, rel: str, fig: go.Figure, div_id: str, written: List[str]) -> None:
    path = os.path.join(root, rel)
    fig.update_layout(**PLOTLY_THEME)
    try:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        fig.write_html(path, include_plotlyjs="cdn", full_html=True, div_id=div_id)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    written.append(rel)


def metrics_figure(result: ExperimentResult) -> go.Figure:
    fig = go.Figure()
    for split in result.splits:
        reports = result.reports_for(split=split)
        for label, attr in METRIC_TRACES:
            fig.add_trace(go.Bar(
                name=f"{label} ({split})",
                x=[r.display_name for r in reports],
                y=[getattr(r.class_1, attr) for r in reports],
            ))
    fig.update_layout(barmode="group", title=f"{result.name}: class-1 metrics", yaxis=dict(range=[0, 1]))
    return fig


def distribution_figure(result: ExperimentResult) -> go.Figure:
    df = result.distribution
    fig = go.Figure()
    fig.add_trace(go.Bar(name="Class 0 (Non-Fraud)", x=df["Subset"], y=df["Class 0 (Non-Fraud)"]))
    fig.add_trace(go.Bar(name="Class 1 (Fraud)", x=df["Subset"], y=df["Class 1 (Fraud)"]))
    fig.update_layout(barmode="group", title=f"{result.name}: class distribution", yaxis_type="log")
    return fig


def sweep_figure(sweep: RatioSweepResult, selected: Optional[float]) -> go.Figure:
    points = sweep.successful_points()
    fig = go.Figure()
    for metric in ("precision", "recall", "f1"):
        fig.add_trace(go.Scatter(
            x=[p.ratio for p in points], y=[getattr(p, metric) for p in points],
            name=metric, mode="lines+markers", line=dict(color=SERIES_COLORS[metric]),
        ))
    if selected is not None:
        fig.add_vline(x=selected, line_dash="dash", line_color="#64748B")
    fig.update_layout(title=f"{MODEL_INFO[sweep.model]['name']}: fraud-ratio sweep",
                      xaxis=dict(type="log", title="Training fraud ratio"), yaxis=dict(range=[0, 1]))
    return fig


def comparison_figure(result: ExperimentResult) -> go.Figure:
    df = pd.DataFrame(result.comparison)
    fig = go.Figure()
    for column in ("Baseline", "Hybrid"):
        labels = df["Model"] + " · " + df["Metric"]
        fig.add_trace(go.Bar(name=column, x=labels, y=df[column].astype(float)))
    fig.update_layout(barmode="group", title="Baseline vs hybrid (class 1)", yaxis=dict(range=[0, 1]))
    return fig


# ─── Emission ───

def _emit_result(result: ExperimentResult, root: str, formats: Sequence[str], written: List[str]) -> None:
    base = f"reports/{result.name}"
    for model in result.models:
        if "json" in formats:
            _write_text(root, f"{base}/{model}.json", canonical_json(model_document(result, model)), written)
        if "csv" in formats:
            _write_text(root, f"{base}/{model}.csv", _csv(model_frame(result, model)), written)
        if "markdown" in formats:
            _write_text(root, f"{base}/{model}.md", model_markdown(result, model), written)
        if "svg" in formats:
            _write_text(root, f"{base}/{model}.svg", model_svg(result, model), written)

    if "markdown" in formats:
        sections = [f"# {result.name}", ""]
        for split in result.splits:
            sections += [f"## {split}", "", markdown_table(result.summary_table(split))]
        _write_text(root, f"{base}/summary.md", "\n".join(sections), written)
        if result.comparison:
            _write_text(root, f"{base}/comparison.md", markdown_table(pd.DataFrame(result.comparison)), written)
    if "csv" in formats:
        frames = [result.summary_table(split).assign(Split=split) for split in result.splits]
        summary = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SUMMARY_COLUMNS + ["Split"])
        _write_text(root, f"{base}/summary.csv", _csv(summary[["Split", *SUMMARY_COLUMNS]]), written)
        _write_text(root, f"{base}/class_distribution.csv", _csv(result.distribution), written)
        if result.comparison:
            _write_text(root, f"{base}/comparison.csv", _csv(pd.DataFrame(result.comparison)), written)

    for model, sweep in result.sweeps.items():
        selected = result.selected_ratios.get(model)
        if "csv" in formats:
            _write_text(root, f"sweeps/{model}.csv", _csv(sweep.to_frame()), written)
        if "svg" in formats:
            _write_text(root, f"sweeps/{model}.svg", sweep_svg(sweep, selected), written)

    if "html" in formats:
        _write_figure(root, f"charts/{result.name}_metrics.html", metrics_figure(result),
                      f"fraudlab-{result.name}-metrics", written)
        _write_figure(root, f"charts/{result.name}_distribution.html", distribution_figure(result),
                      f"fraudlab-{result.name}-distribution", written)
        for model, sweep in result.sweeps.items():
            _write_figure(root, f"charts/{result.name}_sweep_{model}.html",
                          sweep_figure(sweep, result.selected_ratios.get(model)),
                          f"fraudlab-{result.name}-sweep-{model}", written)
        if result.comparison:
            _write_figure(root, f"charts/{result.name}_comparison.html", comparison_figure(result),
                          f"fraudlab-{result.name}-comparison", written)


def write_manifest(root: str, artifacts: Iterable[str], config: Optional[Dict], experiments: Sequence[str]) -> str:
    entries = []
    for rel in sorted(set(artifacts)):
        path = os.path.join(root, rel)
        entries.append({"path": rel, "sha256": sha256_file(path), "bytes": os.path.getsize(path)})
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "experiments": list(experiments),
        "config": config,
        "artifacts": entries,
    }
    written: List[str] = []
    _write_text(root, MANIFEST_NAME, canonical_json(manifest), written)
    return os.path.join(root, MANIFEST_NAME)


def emit_reports(results, output_dir: str, formats: Iterable[str]) -> List[str]:
    """
    Write every requested format for one ExperimentResult or a list of them,
    then the manifest. Returns the artifact paths relative to `output_dir`,
    manifest last. An empty format set writes only the manifest.
    """
    if isinstance(results, ExperimentResult):
        results = [results]
    formats = sorted(set(formats))
    unknown = [f for f in formats if f not in REPORT_FORMATS]
    if unknown:
        raise UsageError(f"unknown report format(s): {', '.join(unknown)}")

    validate_output_dir(output_dir)
    written: List[str] = []
    for result in results:
        _emit_result(result, output_dir, formats, written)
    config = results[0].config_snapshot if results else None
    write_manifest(output_dir, written, config, [r.name for r in results])
    logger.info(f"Wrote {len(written)} report artifact(s) and {MANIFEST_NAME} to {output_dir}")
    return written + [MANIFEST_NAME]
