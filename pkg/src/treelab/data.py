"""Column-oriented tabular data shared by the generators and learners."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

REGRESSION = "regression"
CLASSIFICATION = "binary-class"
TASKS = (REGRESSION, CLASSIFICATION)

# Returned by accessors in place of a masked entry.
MISSING = None


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureColumn:
    values: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.missing_mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise DataError(
                f"values and missing_mask must be 1-d of equal length, got {values.shape} and {mask.shape}"
            )
        values = values.copy()
        # masked slots are never exposed, NaN keeps them out of arithmetic
        values[mask] = np.nan
        values.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)

    @classmethod
    def from_values(cls, values, missing_mask=None) -> "FeatureColumn":
        values = np.asarray(values, dtype=np.float64)
        if missing_mask is None:
            missing_mask = np.isnan(values)
        return cls(values, missing_mask)

    def __len__(self) -> int:
        return len(self.values)

    def get(self, i: int) -> Optional[float]:
        """Entry ``i`` as a float, or ``MISSING`` when masked."""
        if self.missing_mask[i]:
            return MISSING
        return float(self.values[i])

    def observed(self) -> np.ndarray:
        return self.values[~self.missing_mask]

    def take(self, rows) -> "FeatureColumn":
        return FeatureColumn(self.values[rows], self.missing_mask[rows])


@dataclass(frozen=True)
class Target:
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in TASKS:
            raise DataError(f"unknown target kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64).copy()
        if values.ndim != 1:
            raise DataError("target must be 1-d")
        if not np.all(np.isfinite(values)):
            raise DataError("target values must be finite")
        if self.kind == CLASSIFICATION and not np.all((values == 0) | (values == 1)):
            raise DataError("classification targets must be 0 or 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def take(self, rows) -> "Target":
        return Target(self.kind, self.values[rows])


@dataclass(frozen=True)
class Dataset:
    columns: tuple
    target: Target
    n_rows: int
    _matrix: np.ndarray = field(repr=False, compare=False)

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def task(self) -> str:
        return self.target.kind

    @property
    def y(self) -> np.ndarray:
        return self.target.values

    def matrix(self) -> np.ndarray:
        """Row-major ``(n, p)`` float matrix, NaN where masked. Read-only."""
        return self._matrix

    def row(self, i: int) -> tuple:
        return tuple(col.get(i) for col in self.columns)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return make_dataset([c.take(rows) for c in self.columns], self.target.take(rows))

    def to_csv(self, path) -> None:
        write_csv(self, path)


def make_dataset(columns: Sequence[FeatureColumn], target: Target) -> Dataset:
    columns = tuple(columns)
    if not columns:
        raise DataError("a dataset needs at least one feature column")
    n = len(target)
    for j, col in enumerate(columns):
        if len(col) != n:
            raise DataError(
                f"column {j} has length {len(col)}, expected {n} (target length)"
            )
    mat = np.column_stack([c.values for c in columns]) if n else np.empty((0, len(columns)))
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    mat.setflags(write=False)
    return Dataset(columns, target, n, mat)


def from_matrix(X, y, task: str = REGRESSION) -> Dataset:
    """Build a dataset from an ``(n, p)`` array where NaN marks missing entries."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be 2-d")
    cols = [FeatureColumn.from_values(X[:, j]) for j in range(X.shape[1])]
    return make_dataset(cols, Target(task, y))


def split_train_valid(data: Dataset, valid_fraction: float, rng: np.random.Generator):
    """Shuffle rows and split off ``round(valid_fraction * n)`` validation rows."""
    if not 0.0 < valid_fraction < 1.0:
        raise DataError("valid_fraction must lie in (0, 1)")
    n = data.n_rows
    n_valid = int(np.floor(valid_fraction * n + 0.5))
    if int(np.floor(valid_fraction * n)) < 1 or n - n_valid < 1:
        raise DataError(f"cannot split {n} rows with valid_fraction={valid_fraction}")
    perm = rng.permutation(n)
    return data.take(perm[n_valid:]), data.take(perm[:n_valid])


def unique_value_count(col: FeatureColumn) -> int:
    return int(np.unique(col.observed()).size)


def write_csv(data: Dataset, path) -> None:
    path = Path(path)
    header = [f"x{j + 1}" for j in range(data.p)] + ["y"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n_rows):
            row = ["" if v is MISSING else repr(v) for v in data.row(i)]
            yv = data.y[i]
            row.append(str(int(yv)) if data.task == CLASSIFICATION else repr(float(yv)))
            w.writerow(row)


def read_csv(path, task: str = REGRESSION) -> Dataset:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "y":
        raise DataError("last CSV column must be 'y'")
    p = len(header) - 1
    X = np.array([[float(v) if v != "" else np.nan for v in r[:p]] for r in body]).reshape(len(body), p)
    y = np.array([float(r[p]) for r in body])
    return from_matrix(X, y, task)
