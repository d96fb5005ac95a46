"""CSV ingestion, class bookkeeping and stratified fold planning."""
from __future__ import annotations

import csv
import enum
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .numeric import RandomSource

log = logging.getLogger(__name__)

DEFAULT_LABEL_COLUMN = "legitimate"
DEFAULT_SEED = 42
DEFAULT_FOLDS = 10

_DELIMITERS = ",|;\t"


class DatasetError(ValueError):
    """Raised for malformed or unusable datasets."""


class EmptyTableError(DatasetError):
    pass


class PositiveClass(str, enum.Enum):
    RANSOMWARE = "ransomware"
    LEGITIMATE = "legitimate"

    @classmethod
    def parse(cls, value) -> "PositiveClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DatasetError(
                f"unknown positive class {value!r}; expected one of "
                f"{[c.value for c in cls]}") from None


@dataclass(frozen=True)
class FeatureTable:
    columns: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray
    positive_class: PositiveClass = PositiveClass.RANSOMWARE
    dropped_columns: tuple[str, ...] = ()

    def __post_init__(self):
        columns = tuple(str(c) for c in self.columns)
        values = np.array(self.values, dtype=np.float64, copy=True)
        labels = np.array(self.labels, copy=True)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, len(columns))
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise DatasetError(
                f"values shape {values.shape} does not match {len(columns)} columns")
        if any(not c for c in columns):
            raise DatasetError("empty column name")
        if len(set(columns)) != len(columns):
            raise DatasetError("duplicate column names")
        if labels.shape != (values.shape[0],):
            raise DatasetError(
                f"{labels.shape[0] if labels.ndim else 0} labels for {values.shape[0]} rows")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")
        if not np.isfinite(values).all():
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise DatasetError(f"non-finite value at row {r}, column {columns[c]!r}")
        labels = labels.astype(np.int8)
        values.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "positive_class", PositiveClass.parse(self.positive_class))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column_indices(self, names) -> list[int]:
        lookup = {c: i for i, c in enumerate(self.columns)}
        missing = [n for n in names if n not in lookup]
        if missing:
            raise DatasetError(f"unknown column(s): {missing}")
        return [lookup[n] for n in names]

    def select(self, names) -> np.ndarray:
        return self.values[:, self.column_indices(names)]

    def subset(self, rows) -> "FeatureTable":
        return FeatureTable(self.columns, self.values[rows], self.labels[rows],
                            self.positive_class, self.dropped_columns)


def _parse_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def _sniff_delimiter(header_line: str) -> str:
    counts = {d: header_line.count(d) for d in _DELIMITERS}
    best = max(counts, key=counts.get)
    return best if counts[best] else ","


def load_csv(path, label_column: str = DEFAULT_LABEL_COLUMN,
             positive_class=PositiveClass.RANSOMWARE,
             label_means=PositiveClass.LEGITIMATE,
             delimiter: str | None = None) -> FeatureTable:
    """Load a labelled feature CSV.

    ``label_means`` says which class a raw label of 1 denotes (the public
    dataset's ``legitimate`` column uses 1 = legitimate). Labels are remapped so
    that y = 1 means ``positive_class``. Columns whose cells are mostly
    non-numeric (file names, hashes) are dropped and logged; a stray
    unparseable cell in a numeric column is an error.

    If ``delimiter`` is None it is guessed from the header line among
    ``, | ; TAB``.
    """
    positive_class = PositiveClass.parse(positive_class)
    label_means = PositiveClass.parse(label_means)
    if not os.path.isfile(path):
        raise DatasetError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise DatasetError(f"{path}: missing header row")
        if delimiter is None:
            delimiter = _sniff_delimiter(first)
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delimiter)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if r]

    if any(not h for h in header):
        raise DatasetError(f"{path}: empty column name in header")
    seen = set()
    for h in header:
        if h in seen:
            raise DatasetError(f"{path}: duplicate header {h!r}")
        seen.add(h)
    if label_column not in header:
        raise DatasetError(f"{path}: label column {label_column!r} not in header")
    if not rows:
        raise EmptyTableError(f"{path}: header present but no data rows")
    width = len(header)
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DatasetError(
                f"{path}: row {i + 2} has {len(r)} fields, expected {width}")

    columns: list[str] = []
    arrays: list[np.ndarray] = []
    dropped: list[str] = []
    labels = None
    for j, name in enumerate(header):
        cells = [r[j] for r in rows]
        try:
            col = np.array(cells, dtype=np.float64)
        except ValueError:
            parsed = [_parse_float(c) for c in cells]
            bad = [i for i, v in enumerate(parsed) if v is None]
            if name != label_column and len(bad) * 2 > len(cells):
                dropped.append(name)
                continue
            i = bad[0]
            raise DatasetError(
                f"{path}: unparseable numeric cell {cells[i]!r} at row {i + 2}, "
                f"column {name!r}") from None
        nonfinite = np.flatnonzero(~np.isfinite(col))
        if nonfinite.size:
            i = int(nonfinite[0])
            raise DatasetError(
                f"{path}: non-finite value {cells[i]!r} at row {i + 2}, column {name!r}")
        if name == label_column:
            off = np.flatnonzero((col != 0) & (col != 1))
            if off.size:
                i = int(off[0])
                raise DatasetError(
                    f"{path}: label {cells[i]!r} at row {i + 2} is not 0 or 1")
            labels = col.astype(np.int8)
            continue
        columns.append(name)
        arrays.append(col)

    for name in dropped:
        log.warning("dropping non-numeric column %r", name)
    if label_means != positive_class:
        labels = (1 - labels).astype(np.int8)
    values = np.column_stack(arrays) if arrays else np.empty((len(rows), 0))
    table = FeatureTable(tuple(columns), values, labels, positive_class, tuple(dropped))
    pos, neg = class_distribution(table)
    log.info("loaded %s: %d rows x %d features, %d %s / %d other",
             path, table.n_samples, table.n_features, pos, positive_class.value, neg)
    return table


def write_csv(table: FeatureTable, path, label_column: str = DEFAULT_LABEL_COLUMN,
              label_means=PositiveClass.LEGITIMATE) -> None:
    """Write ``table`` in the ingestion format; floats use shortest round-trip repr."""
    label_means = PositiveClass.parse(label_means)
    raw = table.labels if label_means == table.positive_class else 1 - table.labels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(table.columns) + [label_column])
        for row, lab in zip(table.values.tolist(), raw.tolist()):
            w.writerow([repr(v) for v in row] + [int(lab)])


def class_distribution(table_or_labels) -> tuple[int, int]:
    """(positive_count, negative_count)."""
    labels = getattr(table_or_labels, "labels", table_or_labels)
    labels = np.asarray(labels)
    pos = int(np.count_nonzero(labels == 1))
    return pos, int(labels.size - pos)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.assignments, dtype=np.int64, copy=True)
        a.flags.writeable = False
        object.__setattr__(self, "assignments", a)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        return self.train_indices(fold), self.test_indices(fold)

    def __iter__(self):
        for fold in range(self.k):
            yield self.split(fold)


def stratified_kfold(table_or_labels, k: int = DEFAULT_FOLDS,
                     seed: int = DEFAULT_SEED) -> FoldPlan:
    """Stratified fold assignment.

    Each class is shuffled with a seeded generator and dealt round-robin
    across folds; the dealing offset carries over between classes so fold
    sizes also stay within one of each other.
    """
    labels = np.asarray(getattr(table_or_labels, "labels", table_or_labels))
    if k < 2:
        raise DatasetError(f"k must be at least 2, got {k}")
    rng = RandomSource(seed)
    assignments = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise DatasetError(f"class {cls} has {idx.size} samples, fewer than k={k}")
        shuffled = idx[rng.derive(cls).permutation(idx.size)]
        assignments[shuffled] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return FoldPlan(k, seed, assignments)


def stratified_holdout(labels, fraction: float, rng: RandomSource):
    """Split row indices into (keep, holdout) with ~``fraction`` of each class held out."""
    labels = np.asarray(labels)
    keep, hold = [], []
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        n_hold = int(math.floor(fraction * idx.size + 0.5))
        if idx.size >= 2:
            n_hold = min(max(n_hold, 1), idx.size - 1)
        else:
            n_hold = 0
        hold.append(idx[:n_hold])
        keep.append(idx[n_hold:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(hold))
