"""
Utility helpers: shared functions used across the toolkit.
"""

import hashlib
import json
import os
from typing import Any, List

import numpy as np


# ─── Seeds & Hashing ───

def derive_seed(master: int, *labels: Any) -> int:
    """
    Derive an independent 63-bit seed from a master seed and a fixed label path.
    The same (master, labels) always yields the same seed, regardless of call order.
    """
    key = ":".join([str(int(master)), *[str(label) for label in labels]])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(master: int, *labels: Any) -> np.random.Generator:
    """numpy Generator on the stream derived from (master, labels)."""
    return np.random.default_rng(derive_seed(master, *labels))


def sha256_bytes(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
    return h.hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    """Stable JSON text (sorted keys, fixed separators) for hashing and files."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default)


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


# ─── Numerics ───

_PROBA_EPS = 1e-15


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def open_unit_interval(p: np.ndarray) -> np.ndarray:
    """Clamp probabilities into (0, 1) so saturated sigmoids never report exactly 0 or 1."""
    return np.clip(p, _PROBA_EPS, 1.0 - _PROBA_EPS)


def log_loss_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy computed from logits: softplus(z) − y·z."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))


def round_half_up(x: float) -> int:
    """Deterministic rounding for sample counts (0.5 goes up, unlike Python's round)."""
    return int(np.floor(x + 0.5))


def log_spaced_grid(start: float, stop: float, steps: int) -> List[float]:
    return [float(r) for r in np.round(np.geomspace(start, stop, steps), 6)]


# ─── Formatting Utilities ───

def fmt_pct(value: float, decimals: int = 2) -> str:
    """Format as percentage."""
    return f"{value * 100:.{decimals}f}%"


def fmt_number(value: float, decimals: int = 4) -> str:
    """Format a metric value with fixed decimals."""
    return f"{value:.{decimals}f}"


def fmt_count(value: int) -> str:
    """Format a count with thousands separators."""
    return f"{value:,}"


def fmt_change(before: float, after: float) -> str:
    """Relative change as a signed percentage ('+23.2%'); 'n/a' when before is 0."""
    if before == 0:
        return "n/a"
    return f"{(after - before) / before * 100:+.1f}%"


# ─── Data Validation ───

def validate_config_ranges(config) -> List[str]:
    """Warnings for experiment settings that are legal but probably unintended."""
    warnings = []

    if config.split_fraction > 0.5:
        warnings.append("⚠️ Test split above 50% leaves less data for training than for evaluation.")

    if config.smote_k > 10:
        warnings.append("⚡ SMOTE k above 10 interpolates across distant fraud rows; 5 is conventional.")

    if config.sweep.paper_protocol:
        warnings.append("⚠️ paper_protocol selects the fraud ratio on the test split, so reported metrics are optimistic.")

    if config.threads > (os.cpu_count() or 1):
        warnings.append(f"⚡ {config.threads} threads requested but only {os.cpu_count()} CPUs available.")

    if config.threshold != 0.5:
        warnings.append("⚡ Decision threshold differs from the default 0.5; results are not comparable to published tables.")

    if any(r > 0.25 for r in config.sweep.ratios) and config.sweep.multiplier > 50:
        warnings.append("⚡ High fraud ratios with a large multiplier shrink the majority class drastically.")

    return warnings
