"""
Dataset Layer
Loads, validates, scales, splits and synthesizes labeled transaction datasets.

A Dataset is immutable: every operation returns a new one, arrays are read-only,
and rows keep stable integer ids through every split and resampling step.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.config import (
    LABEL_COLUMN, ROW_ID_COLUMN, ULB_COLUMNS, DEFAULT_SCALE_COLUMNS,
    SYNTHETIC_ID_FLOOR, SyntheticSpec,
)
from utils.errors import DataError, DataValidationError, OutputError, ParseError, SchemaError
from utils.helpers import canonical_json, round_half_up, sha256_bytes

logger = logging.getLogger("fraudlab.dataset")

PROVENANCE_COLUMNS = ["row_id", "base_id", "neighbor_id", "u"]
_SYNTHETIC_FEATURE = re.compile(r"^x\d+$")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled feature matrix. Label 1 = fraud, 0 = non-fraud."""
    features: np.ndarray
    labels: np.ndarray
    feature_names: Tuple[str, ...]
    row_ids: np.ndarray
    smote_provenance: Optional[pd.DataFrame] = field(default=None, repr=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DataValidationError(f"features must be a 2-D matrix, got {features.ndim}-D")
        raw_labels = np.asarray(self.labels)
        row_ids = np.asarray(self.row_ids).astype(np.int64)
        n = features.shape[0]

        if raw_labels.shape != (n,) or row_ids.shape != (n,):
            raise DataValidationError(
                f"row count mismatch: features={n}, labels={raw_labels.shape[0] if raw_labels.ndim else 0}, row_ids={row_ids.shape[0]}"
            )
        if len(self.feature_names) != features.shape[1]:
            raise DataValidationError(
                f"{len(self.feature_names)} feature names for {features.shape[1]} columns"
            )
        bad_label = np.flatnonzero(~np.isin(raw_labels, (0, 1)))
        if bad_label.size:
            raise DataValidationError(f"row {bad_label[0]}: label outside {{0, 1}}", row=int(bad_label[0]))
        labels = raw_labels.astype(np.int8)
        if not np.isfinite(features).all():
            row = int(np.flatnonzero(~np.isfinite(features).all(axis=1))[0])
            raise DataValidationError(f"row {row}: non-finite feature value", row=row)
        if np.unique(row_ids).size != n:
            raise DataValidationError("row_ids are not unique")

        object.__setattr__(self, "features", _readonly(features))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "row_ids", _readonly(row_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.smote_provenance is not None:
            prov = self.smote_provenance
            prov = prov[prov["row_id"].isin(row_ids)].sort_values("row_id").reset_index(drop=True)
            object.__setattr__(self, "smote_provenance", prov if len(prov) else None)

    # ─── Shape & class statistics ───

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> Tuple[int, int]:
        """(non-fraud count, fraud count)."""
        n_fraud = int(self.labels.sum())
        return self.n_rows - n_fraud, n_fraud

    @property
    def fraud_fraction(self) -> float:
        return self.class_counts()[1] / self.n_rows if self.n_rows else 0.0

    def original_mask(self) -> np.ndarray:
        """True for rows that came from a loaded/generated file, False for SMOTE rows."""
        return self.row_ids < SYNTHETIC_ID_FLOOR

    def original_ids(self) -> np.ndarray:
        return self.row_ids[self.original_mask()]

    # ─── Row selection ───

    def select(self, row_ids: Iterable[int]) -> "Dataset":
        """Rows whose id is in `row_ids`, returned in ascending row_id order."""
        wanted = np.asarray(sorted(set(int(i) for i in row_ids)), dtype=np.int64)
        order = np.argsort(self.row_ids, kind="stable")
        sorted_ids = self.row_ids[order]
        pos = np.searchsorted(sorted_ids, wanted)
        if wanted.size and (pos.max() >= sorted_ids.size or not np.array_equal(sorted_ids[pos], wanted)):
            raise DataValidationError("select() asked for row_ids absent from the dataset")
        return self._take(order[pos])

    def canonical(self) -> "Dataset":
        """Same rows, sorted by row_id."""
        return self._take(np.argsort(self.row_ids, kind="stable"))

    def _take(self, positions: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[positions],
            labels=self.labels[positions],
            feature_names=self.feature_names,
            row_ids=self.row_ids[positions],
            smote_provenance=self.smote_provenance,
        )

    def concat(self, other: "Dataset") -> "Dataset":
        if other.feature_names != self.feature_names:
            raise SchemaError("cannot concatenate datasets with different feature columns")
        provs = [p for p in (self.smote_provenance, other.smote_provenance) if p is not None]
        return Dataset(
            features=np.vstack([self.features, other.features]),
            labels=np.concatenate([self.labels, other.labels]),
            feature_names=self.feature_names,
            row_ids=np.concatenate([self.row_ids, other.row_ids]),
            smote_provenance=pd.concat(provs, ignore_index=True) if provs else None,
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.feature_names, self.row_ids, self.smote_provenance)

    # ─── Export & identity ───

    def to_frame(self, include_row_id: bool = True) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        df[LABEL_COLUMN] = self.labels.astype(int)
        if include_row_id:
            df.insert(0, ROW_ID_COLUMN, self.row_ids)
        return df

    def content_hash(self) -> str:
        return sha256_bytes(
            canonical_json(list(self.feature_names)).encode("utf-8"),
            np.ascontiguousarray(self.features).tobytes(),
            np.ascontiguousarray(self.labels).tobytes(),
            np.ascontiguousarray(self.row_ids).tobytes(),
        )

    def id_hash(self) -> str:
        """Hash of the row_id set, independent of row order."""
        return sha256_bytes(np.sort(self.row_ids).tobytes())

    def fingerprint(self) -> Dict:
        n0, n1 = self.class_counts()
        return {"rows": self.n_rows, "fraud": n1, "non_fraud": n0, "content_hash": self.content_hash()}


# ─── CSV I/O ───

def _expected_schema(header: Sequence[str]) -> Tuple[str, ...]:
    """Generated datasets use x1..xd; anything else is checked against the ULB columns."""
    features = [c for c in header if c != LABEL_COLUMN]
    if features and all(_SYNTHETIC_FEATURE.match(c) for c in features):
        return tuple(f"x{i}" for i in range(1, len(features) + 1)) + (LABEL_COLUMN,)
    return ULB_COLUMNS


def _check_schema(header: List[str], schema: Sequence[str]) -> None:
    missing = [c for c in schema if c not in header]
    if missing:
        raise SchemaError(f"missing column: {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    extra = [c for c in header if c not in schema]
    if extra:
        raise SchemaError(f"unexpected column: {extra[0]!r}")
    if len(header) != len(schema):
        raise SchemaError("duplicate column names in header")
    for pos, (found, expected) in enumerate(zip(header, schema)):
        if found != expected:
            raise SchemaError(f"column order mismatch at position {pos}: expected {expected!r}, found {found!r}")


def load_csv(path: str, schema: Optional[Sequence[str]] = None) -> Dataset:
    """
    Load a labeled CSV.

    The header must equal `schema` exactly (default: Time, V1..V28, Amount, Class,
    or x1..xd, Class for generated datasets). An optional leading `row_id`
    column carries ids through resample/train/evaluate stages; without it rows
    are numbered 0..n−1 in file order.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, index_col=False)
    except FileNotFoundError as e:
        raise DataError(f"{path}: file not found") from e
    except pd.errors.EmptyDataError as e:
        raise DataValidationError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: malformed row ({e})") from e

    header = [str(c) for c in raw.columns]
    has_ids = bool(header) and header[0] == ROW_ID_COLUMN
    body = header[1:] if has_ids else header
    expected = tuple(schema) if schema is not None else _expected_schema(body)
    _check_schema(body, expected)

    if len(raw) == 0:
        raise DataValidationError(f"{path}: no data rows")

    values = np.empty((len(raw), len(body)), dtype=np.float64)
    for j, col in enumerate(body):
        cells = raw[col]
        numeric = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            row = int(bad[0])
            raise ParseError(
                f"{path}: row {row}, column {col!r}: {cells.iloc[row]!r} is not a finite number", row=row
            )
        values[:, j] = numeric

    labels = values[:, -1]
    bad = np.flatnonzero((labels != 0.0) & (labels != 1.0))
    if bad.size:
        row = int(bad[0])
        raise DataValidationError(f"{path}: row {row}: Class {raw[LABEL_COLUMN].iloc[row]!r} not in {{0, 1}}", row=row)

    if has_ids:
        ids = pd.to_numeric(raw[ROW_ID_COLUMN], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(ids) | (ids != np.round(ids)))
        if bad.size:
            row = int(bad[0])
            raise ParseError(f"{path}: row {row}: row_id {raw[ROW_ID_COLUMN].iloc[row]!r} is not an integer", row=row)
        row_ids = ids.astype(np.int64)
    else:
        row_ids = np.arange(len(raw), dtype=np.int64)

    ds = Dataset(
        features=values[:, :-1],
        labels=labels.astype(np.int8),
        feature_names=tuple(body[:-1]),
        row_ids=row_ids,
    )
    n0, n1 = ds.class_counts()
    logger.info(f"Loaded {path}: {ds.n_rows:,} rows × {ds.n_features} features ({n0:,} non-fraud / {n1:,} fraud)")
    return ds


def save_csv(ds: Dataset, path: str) -> None:
    """Write rows (with their row_id) so downstream stages keep provenance."""
    try:
        ds.to_frame(include_row_id=True).to_csv(path, index=False)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info(f"Wrote {ds.n_rows:,} rows to {path}")


# ─── Robust Scaling ───

@dataclass(frozen=True)
class ScalerParams:
    """Per-column median/IQR scaling, fit on training rows only."""
    columns: Tuple[str, ...]
    center: Tuple[float, ...]
    spread: Tuple[float, ...]
    fitted_on: str = ""     # id_hash of the rows the scaler was fit on

    @property
    def constant(self) -> Tuple[bool, ...]:
        return tuple(s == 0.0 for s in self.spread)

    @property
    def scaled_columns(self) -> frozenset:
        return frozenset(self.columns)

    @property
    def scaler_id(self) -> str:
        return sha256_bytes(canonical_json(self.to_dict()).encode("utf-8"))[:16]

    def to_dict(self) -> Dict:
        return {
            "columns": list(self.columns),
            "center": list(self.center),
            "spread": list(self.spread),
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ScalerParams":
        return cls(
            columns=tuple(data["columns"]),
            center=tuple(float(v) for v in data["center"]),
            spread=tuple(float(v) for v in data["spread"]),
            fitted_on=data.get("fitted_on", ""),
        )


def resolve_scale_columns(ds: Dataset, requested: Optional[Iterable[str]] = None) -> List[str]:
    """Requested columns, or Time/Amount when present, or every column for generated data."""
    if requested is not None:
        return list(requested)
    present = [c for c in DEFAULT_SCALE_COLUMNS if c in ds.feature_names]
    return present if present else list(ds.feature_names)


def _column_positions(ds: Dataset, columns: Iterable[str]) -> List[int]:
    positions = []
    for col in columns:
        if col not in ds.feature_names:
            raise SchemaError(f"scaler column {col!r} not in dataset")
        positions.append(ds.feature_names.index(col))
    return positions


def fit_robust_scaler(ds: Dataset, columns: Iterable[str]) -> ScalerParams:
    """Center = median, spread = Q3 − Q1 with linear-interpolation quantiles."""
    if ds.n_rows == 0:
        raise DataValidationError("cannot fit a scaler on an empty dataset")
    columns = list(columns)
    positions = _column_positions(ds, columns)
    block = ds.features[:, positions]
    center = np.median(block, axis=0)
    q1, q3 = np.quantile(block, [0.25, 0.75], axis=0, method="linear")
    spread = q3 - q1
    for col, s in zip(columns, spread):
        if s == 0.0:
            logger.warning(f"Scaler column {col!r} has zero interquartile range; it will scale to 0")
    return ScalerParams(
        columns=tuple(columns),
        center=tuple(float(c) for c in center),
        spread=tuple(float(s) for s in spread),
        fitted_on=ds.id_hash(),
    )


def apply_scaler(ds: Dataset, params: ScalerParams) -> Dataset:
    """(x − center) / spread per scaled column; zero-spread columns become 0."""
    positions = _column_positions(ds, params.columns)
    features = np.array(ds.features, copy=True)
    for pos, center, spread in zip(positions, params.center, params.spread):
        if spread == 0.0:
            features[:, pos] = 0.0
        else:
            features[:, pos] = (features[:, pos] - center) / spread
    return ds.with_features(features)


def invert_scaler(ds: Dataset, params: ScalerParams) -> Dataset:
    """Inverse of apply_scaler (zero-spread columns return to their center)."""
    positions = _column_positions(ds, params.columns)
    features = np.array(ds.features, copy=True)
    for pos, center, spread in zip(positions, params.center, params.spread):
        features[:, pos] = features[:, pos] * spread + center
    return ds.with_features(features)


# ─── Splitting ───

def _check_fraction(test_fraction: float) -> None:
    if not 0.0 < test_fraction < 1.0:
        raise DataValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")


def stratified_split(ds: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Per class, shuffle the rows (ordered by row_id) with the seed and send the
    first round(class_count × test_fraction) to the test side.
    """
    _check_fraction(test_fraction)
    rng = np.random.default_rng(seed)
    test_ids = []
    for label in (0, 1):
        ids = np.sort(ds.row_ids[ds.labels == label])
        if ids.size < 2:
            raise DataValidationError(f"class {label} has {ids.size} row(s); stratified split needs at least 2")
        k = round_half_up(ids.size * test_fraction)
        test_ids.append(ids[rng.permutation(ids.size)[:k]])
    test_ids = np.concatenate(test_ids)
    train_ids = np.setdiff1d(ds.row_ids, test_ids)
    train, test = ds.select(train_ids), ds.select(test_ids)
    logger.info(
        f"Stratified split {1 - test_fraction:.0%}/{test_fraction:.0%}: "
        f"train {train.class_counts()}, test {test.class_counts()}"
    )
    return train, test


def random_split(ds: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Shuffle all rows (ordered by row_id) and take round(n × test_fraction) as test."""
    _check_fraction(test_fraction)
    if ds.n_rows == 0:
        raise DataValidationError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    ids = np.sort(ds.row_ids)
    k = round_half_up(ids.size * test_fraction)
    test_ids = ids[rng.permutation(ids.size)[:k]]
    train_ids = np.setdiff1d(ids, test_ids)
    train, test = ds.select(train_ids), ds.select(test_ids)
    logger.info(f"Random split: train {train.class_counts()}, test {test.class_counts()}")
    return train, test


# ─── Synthetic Data ───

def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """
    Gaussian cluster mixture for desk-scale runs without the ULB CSV.

    Both classes share the same base cluster centers; each fraud cluster is
    shifted by `class_separation` along its own random unit direction, so a
    separation of 0 makes the classes identically distributed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, n_clusters = spec.dimensions, spec.cluster_count_per_class

    base_centers = rng.normal(0.0, 1.5, size=(n_clusters, d))
    directions = rng.normal(size=(n_clusters, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    fraud_centers = base_centers + spec.class_separation * directions

    blocks, labels = [], []
    for label, n, centers in ((0, spec.n_majority, base_centers), (1, spec.n_minority, fraud_centers)):
        cluster = np.arange(n) % n_clusters
        blocks.append(centers[cluster] + rng.normal(size=(n, d)))
        labels.append(np.full(n, label, dtype=np.int8))

    features = np.vstack(blocks)
    labels = np.concatenate(labels)
    order = rng.permutation(labels.size)

    ds = Dataset(
        features=features[order],
        labels=labels[order],
        feature_names=tuple(f"x{j}" for j in range(1, d + 1)),
        row_ids=np.arange(labels.size, dtype=np.int64),
    )
    logger.info(
        f"Generated synthetic dataset: {ds.n_rows:,} rows × {d} features, "
        f"{spec.n_minority:,} fraud, separation {spec.class_separation}"
    )
    return ds


# ─── Reporting helpers ───

def class_distribution_table(named: Dict[str, Dataset]) -> pd.DataFrame:
    """Subset / non-fraud / fraud counts in insertion order."""
    rows = []
    for name, ds in named.items():
        n0, n1 = ds.class_counts()
        rows.append({"Subset": name, "Class 0 (Non-Fraud)": n0, "Class 1 (Fraud)": n1})
    return pd.DataFrame(rows, columns=["Subset", "Class 0 (Non-Fraud)", "Class 1 (Fraud)"])
