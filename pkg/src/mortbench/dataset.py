"""Tabular cohort container, CSV ingestion, and train/test/external splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    HospitalNotFound,
    MissingColumn,
    TypeMismatch,
    UnknownColumn,
    ZscTooLarge,
)
from .schema import FeatureSchema
from .util import derive_rng, round_half_up

MISSING_TOKENS = {"", "na", "nan", "none", "null"}


@dataclass
class Dataset:
    """Row-major patient matrix. Missing cells are NaN; labels are 0/1 ints
    (1 = died); hospital holds categorical IDs aligned with rows."""
    schema: FeatureSchema
    X: np.ndarray          # (n, p) float64, NaN = missing
    y: np.ndarray          # (n,) int64 in {0, 1}
    hospital: np.ndarray   # (n,) str

    def __post_init__(self):
        if not (len(self.X) == len(self.y) == len(self.hospital)):
            raise ValueError("rows/labels/hospital lengths differ")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.X[idx], self.y[idx], self.hospital[idx])

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.schema.names.index(name)]


@dataclass
class SplitBundle:
    train: Dataset
    internal_test: Dataset
    external: Dataset
    zsc_subset: Dataset
    seed: int
    # positions of each split's rows in the source dataset, for traceability
    train_idx: np.ndarray = None
    internal_test_idx: np.ndarray = None
    external_idx: np.ndarray = None
    zsc_idx: np.ndarray = None


def _parse_cell(raw: str, dtype: str, row: int, col: str) -> float:
    token = raw.strip()
    if token.lower() in MISSING_TOKENS:
        return np.nan
    try:
        value = float(token)
    except ValueError:
        raise TypeMismatch(row, col, raw) from None
    if dtype == "binary" and value not in (0.0, 1.0):
        raise TypeMismatch(row, col, raw)
    return value


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Parse a UTF-8 CSV with header into a Dataset.

    Header must contain exactly the schema features plus label and hospital
    columns, in any order. Empty / NA / NaN cells (case-insensitive) become
    missing; missing labels or hospital IDs are not allowed.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        expected = set(schema.names) | {schema.label_name, schema.hospital_column}
        got = set(header)
        extra = got - expected
        if extra:
            raise UnknownColumn(f"columns not in schema: {sorted(extra)}")
        absent = expected - got
        if absent:
            raise MissingColumn(f"schema columns absent from CSV: {sorted(absent)}")

        pos = {name: header.index(name) for name in header}
        feat_cols = [(f.name, f.dtype, pos[f.name]) for f in schema.features]
        label_col = pos[schema.label_name]
        hosp_col = pos[schema.hospital_column]

        rows, labels, hospitals = [], [], []
        for i, record in enumerate(reader):
            rows.append([_parse_cell(record[c], dt, i, name) for name, dt, c in feat_cols])
            label = _parse_cell(record[label_col], "binary", i, schema.label_name)
            if np.isnan(label):
                raise TypeMismatch(i, schema.label_name, record[label_col])
            labels.append(int(label))
            hospitals.append(record[hosp_col].strip())

    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    return Dataset(schema, X, np.asarray(labels, dtype=np.int64),
                   np.asarray(hospitals, dtype=object))


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ds.schema.names + [ds.schema.label_name, ds.schema.hospital_column])
        for i in range(ds.n):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in ds.X[i]]
            writer.writerow(cells + [int(ds.y[i]), ds.hospital[i]])


def make_splits(ds: Dataset, external_hospital: str, test_fraction: float = 0.2,
                zsc_size: int = 0, seed: int = 42) -> SplitBundle:
    """Hospital-held-out external split, then a seeded 80/20 internal split.

    The zero-shot subset is a uniform random sample of the internal test rows.
    Internal test size is round-half-up(test_fraction * n_internal).
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    ext_mask = ds.hospital == external_hospital
    if not ext_mask.any():
        raise HospitalNotFound(str(external_hospital))

    ext_idx = np.flatnonzero(ext_mask)
    pool = np.flatnonzero(~ext_mask)
    rng = derive_rng(seed, "split")
    order = rng.permutation(len(pool))
    n_test = round_half_up(test_fraction * len(pool))
    test_idx = np.sort(pool[order[:n_test]])
    train_idx = np.sort(pool[order[n_test:]])

    if zsc_size > len(test_idx):
        raise ZscTooLarge(f"zsc_size {zsc_size} > internal test size {len(test_idx)}")
    zsc_rng = derive_rng(seed, "zsc")
    zsc_idx = np.sort(zsc_rng.choice(test_idx, size=zsc_size, replace=False)) \
        if zsc_size else np.array([], dtype=np.int64)

    return SplitBundle(
        train=ds.take(train_idx),
        internal_test=ds.take(test_idx),
        external=ds.take(ext_idx),
        zsc_subset=ds.take(zsc_idx),
        seed=seed,
        train_idx=train_idx,
        internal_test_idx=test_idx,
        external_idx=ext_idx,
        zsc_idx=zsc_idx,
    )
