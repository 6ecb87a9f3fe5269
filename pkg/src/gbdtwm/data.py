"""Datasets, CSV ingestion, seeded splits and z-score standardization."""
from __future__ import annotations

import csv
import gzip
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus integer class labels in ``0..n_classes-1``.

    Arrays are stored read-only so a dataset can be shared freely.
    ``label_names[c]`` is the original label text that was mapped to ``c``.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: tuple = ()
    label_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError("labels must be 1-D with one entry per row")
        if X.shape[1] < 1:
            raise DataError("need at least one feature")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 1:
            raise DataError("n_classes must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        if self.feature_names and len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match feature count")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes,
                       self.feature_names, self.label_names)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.n_classes, self.feature_names, self.label_names)

    @classmethod
    def empty(cls, n_features, n_classes) -> "Dataset":
        # only used for "nothing to fine-tune on"
        return cls(np.zeros((0, n_features)), np.zeros(0, dtype=np.int64), n_classes)


def concat(parts: Sequence[Dataset]) -> Dataset:
    parts = list(parts)
    if not parts:
        raise DataError("nothing to concatenate")
    d, K = parts[0].n_features, parts[0].n_classes
    for p in parts[1:]:
        if p.n_features != d:
            raise DataError(f"feature dimension mismatch: {p.n_features} != {d}")
        K = max(K, p.n_classes)
    return Dataset(np.vstack([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]), K,
                   parts[0].feature_names, parts[0].label_names)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def _as_int(tok):
    try:
        v = float(tok)
    except ValueError:
        return None
    if not math.isfinite(v) or v != int(v):
        return None
    return int(v)


def load_csv(path, label_column=-1, class_count=None, header=True) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    ``label_column`` is a column index (negative counts from the end) or, when
    the file has a header, a column name. Integer labels are kept as-is when
    ``class_count`` is given and otherwise remapped densely in ascending order;
    any other label text is remapped in order of first occurrence.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with _open_text(path) as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    names = None
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise DataError(f"{path}: no column named {label_column!r}")
        lc = names.index(label_column)
    else:
        lc = label_column % width if -width <= label_column < width else None
        if lc is None:
            raise DataError(f"{path}: label column {label_column} out of range")

    X = np.empty((len(rows), width - 1))
    raw_labels = []
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
        raw_labels.append(r[lc].strip())
        cells = r[:lc] + r[lc + 1:]
        for j, tok in enumerate(cells):
            try:
                v = float(tok)
            except ValueError:
                raise DataError(f"{path}: row {i + 1}, column {j}: non-numeric cell {tok!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i + 1}, column {j}: non-finite value {tok!r}")
            X[i, j] = v

    ints = [_as_int(t) for t in raw_labels]
    if all(v is not None for v in ints):
        if class_count is not None:
            bad = [v for v in ints if not 0 <= v < class_count]
            if bad:
                raise DataError(f"{path}: label {bad[0]} outside [0, {class_count})")
            y = np.asarray(ints, dtype=np.int64)
            K = int(class_count)
            label_names = tuple(str(c) for c in range(K))
        else:
            uniq = sorted(set(ints))
            lookup = {v: c for c, v in enumerate(uniq)}
            y = np.asarray([lookup[v] for v in ints], dtype=np.int64)
            K = len(uniq)
            label_names = tuple(str(v) for v in uniq)
    else:
        lookup = {}
        for t in raw_labels:
            lookup.setdefault(t, len(lookup))
        y = np.asarray([lookup[t] for t in raw_labels], dtype=np.int64)
        K = len(lookup)
        if class_count is not None and K > class_count:
            raise DataError(f"{path}: {K} distinct labels exceed class_count={class_count}")
        K = int(class_count) if class_count is not None else K
        label_names = tuple(lookup)

    fnames = tuple(n for j, n in enumerate(names) if j != lc) if names else ()
    return Dataset(X, y, K, fnames, label_names)


def split(dataset: Dataset, fraction: float, seed: int):
    """Shuffle with ``seed`` and cut into ``ceil(fraction*N)`` / remainder rows."""
    n = len(dataset)
    if not 0.0 < fraction < 1.0:
        raise DataError("fraction must be in (0, 1)")
    n_first = math.ceil(fraction * n)
    if n_first <= 0 or n_first >= n:
        raise DataError(f"fraction {fraction} on {n} rows leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[:n_first]), dataset.subset(perm[n_first:])


def split_indices(n, fraction, seed):
    """Index form of :func:`split` (same permutation, same cut)."""
    n_first = math.ceil(fraction * n)
    if not 0.0 < fraction < 1.0 or n_first <= 0 or n_first >= n:
        raise DataError(f"fraction {fraction} on {n} rows leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:n_first], perm[n_first:]


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def standardize_fit(data) -> StandardizationStats:
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.shape[0] < 1:
        raise DataError("cannot fit standardization on zero rows")
    return StandardizationStats(X.mean(axis=0), X.std(axis=0))


def _scale(stats):
    return np.where(stats.std > 0, stats.std, 1.0)


def standardize_apply(stats: StandardizationStats, x):
    """z-score ``x`` (a vector or a row matrix); zero-variance features are only centred."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DataError(f"dimension mismatch: {x.shape[-1]} != {stats.mean.shape[0]}")
    return (x - stats.mean) / _scale(stats)


def standardize_invert(stats: StandardizationStats, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != stats.mean.shape[0]:
        raise DataError(f"dimension mismatch: {z.shape[-1]} != {stats.mean.shape[0]}")
    return z * _scale(stats) + stats.mean
