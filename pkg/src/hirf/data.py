"""Datasets, bootstrap sampling, feature normalization, and class-arrival schedules."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np


@dataclass(frozen=True)
class LabeledSample:
    """One sample: unique id, feature vector, integer class label."""

    id: int
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of labeled samples with unique ids.

    ``X`` is ``(n, k)`` float64, ``y`` is ``(n,)`` int64, ``ids`` is ``(n,)``
    int64. Instances are treated as immutable; derived views are new objects.
    """

    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D array of shape (n_samples, n_features)")
        if ids.shape != (X.shape[0],) or y.shape != (X.shape[0],):
            raise ValueError("ids, X and y must agree on the number of samples")
        if np.unique(ids).size != ids.size:
            raise ValueError("sample ids must be unique within a dataset")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def class_set(self) -> np.ndarray:
        """Sorted array of the labels present."""
        return np.unique(self.y)

    def samples(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield LabeledSample(int(self.ids[i]), self.X[i], int(self.y[i]))

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.ids[mask], self.X[mask], self.y[mask])

    def restrict_labels(self, labels: Iterable[int]) -> "Dataset":
        wanted = np.asarray(sorted({int(c) for c in labels}), dtype=np.int64)
        return self.subset(np.isin(self.y, wanted))

    def take_rows(self, rows: np.ndarray, fresh_ids: bool = False) -> "Dataset":
        """Materialize a row selection; ``fresh_ids`` renumbers so repeated rows stay legal."""
        rows = np.asarray(rows, dtype=np.int64)
        ids = np.arange(rows.size, dtype=np.int64) if fresh_ids else self.ids[rows]
        return Dataset(ids, self.X[rows], self.y[rows])


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    if a.n_features != b.n_features:
        raise ValueError("feature dimensions differ")
    return Dataset(
        np.concatenate([a.ids, b.ids]),
        np.vstack([a.X, b.X]),
        np.concatenate([a.y, b.y]),
    )


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature mean and population standard deviation.

    Zero-variance features are flagged in ``constant``; they normalize to 0
    instead of dividing by zero.
    """

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


def fit_normalizer(data: Dataset) -> NormalizationStats:
    """Per-feature mean / population std over all samples of ``data``."""
    if len(data) == 0:
        raise ValueError("cannot fit normalization statistics on an empty dataset")
    mean = data.X.mean(axis=0)
    std = data.X.std(axis=0)
    return NormalizationStats(mean=mean, std=std, constant=(std == 0.0))


def normalize(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Z-score ``x`` (a vector or a matrix); flagged constant features map to 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.n_features:
        raise ValueError(
            f"feature dimension {x.shape[-1]} does not match statistics ({stats.n_features})"
        )
    safe = np.where(stats.constant, 1.0, stats.std)
    out = (x - stats.mean) / safe
    if x.ndim == 1:
        out[stats.constant] = 0.0
    else:
        out[:, stats.constant] = 0.0
    return out


def normalize_dataset(data: Dataset, stats: NormalizationStats) -> Dataset:
    return Dataset(data.ids, normalize(data.X, stats), data.y)


@dataclass(frozen=True)
class BootstrapSet:
    """A with-replacement resample of a dataset, recorded as a multiset of ids."""

    tree_index: int
    sample_ids: np.ndarray


def bootstrap(data: Dataset, rng: np.random.Generator, tree_index: int = 0) -> BootstrapSet:
    """Draw ``len(data)`` ids uniformly with replacement; deterministic given the rng state."""
    if len(data) == 0:
        raise ValueError("cannot bootstrap an empty dataset")
    rows = rng.integers(0, len(data), size=len(data))
    return BootstrapSet(tree_index=tree_index, sample_ids=data.ids[rows])


def bootstrap_replicate(data: Dataset, boot: BootstrapSet) -> Dataset:
    """The training multiset a bootstrap denotes, materialized with fresh ids."""
    order = np.argsort(data.ids)
    pos = np.searchsorted(data.ids, boot.sample_ids, sorter=order)
    if pos.size and (pos >= len(data)).any():
        raise ValueError("bootstrap references ids absent from the dataset")
    rows = order[pos]
    if not np.array_equal(data.ids[rows], boot.sample_ids):
        raise ValueError("bootstrap references ids absent from the dataset")
    return data.take_rows(rows, fresh_ids=True)


def left_out(data: Dataset, boot: BootstrapSet) -> Dataset:
    """All samples of ``data`` whose id does not occur in the bootstrap."""
    return data.subset(~np.isin(data.ids, boot.sample_ids))


@dataclass(frozen=True)
class ArrivalSchedule:
    """Which classes are present initially and which arrive in later batches."""

    initial: tuple[int, ...]
    batches: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        initial = tuple(sorted(int(c) for c in self.initial))
        batches = tuple(tuple(sorted(int(c) for c in b)) for b in self.batches)
        seen: set[int] = set()
        for part in (initial, *batches):
            part_set = set(part)
            if len(part_set) != len(part) or part_set & seen:
                raise ValueError("schedule parts must be pairwise disjoint")
            seen |= part_set
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "batches", batches)

    @property
    def all_labels(self) -> set[int]:
        labels = set(self.initial)
        for b in self.batches:
            labels |= set(b)
        return labels


def split_by_schedule(data: Dataset, sched: ArrivalSchedule) -> tuple[Dataset, list[Dataset]]:
    """Partition ``data`` into the initial dataset and one dataset per batch."""
    present = {int(c) for c in data.class_set}
    scheduled = sched.all_labels
    unknown = scheduled - present
    if unknown:
        raise ValueError(f"schedule references labels not in the dataset: {sorted(unknown)}")
    missing = present - scheduled
    if missing:
        raise ValueError(f"schedule does not cover dataset labels: {sorted(missing)}")
    return data.restrict_labels(sched.initial), [data.restrict_labels(b) for b in sched.batches]


def load_schedule(path) -> ArrivalSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return ArrivalSchedule(
        initial=tuple(obj["initial"]),
        batches=tuple(tuple(b) for b in obj.get("batches", [])),
    )


def save_schedule(sched: ArrivalSchedule, path) -> None:
    obj = {"initial": list(sched.initial), "batches": [list(b) for b in sched.batches]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _all_numeric(row: list[str]) -> bool:
    try:
        for cell in row:
            float(cell)
    except ValueError:
        return False
    return True


def load_csv_dataset(path) -> Dataset:
    """Read a dataset from CSV: feature columns f_1..f_k, integer label last.

    A header row is auto-detected (first row with any non-numeric cell).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"no rows in dataset file {path}")
    start = 0 if _all_numeric(rows[0]) else 1
    if start == len(rows):
        raise ValueError(f"no data rows in dataset file {path}")
    feats: list[list[float]] = []
    labels: list[int] = []
    width = len(rows[start])
    if width < 2:
        raise ValueError("rows must have at least one feature column and a label column")
    for idx, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ValueError(f"row {idx} has {len(row)} columns, expected {width}")
        *fs, lab = row
        lab_value = float(lab)
        if lab_value != int(lab_value):
            raise ValueError(f"row {idx}: label {lab!r} is not an integer")
        feats.append([float(v) for v in fs])
        labels.append(int(lab_value))
    X = np.asarray(feats, dtype=np.float64)
    return Dataset(np.arange(len(labels), dtype=np.int64), X, np.asarray(labels, dtype=np.int64))


def save_csv_dataset(data: Dataset, path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"f_{j + 1}" for j in range(data.n_features)] + ["label"])
        for i in range(len(data)):
            writer.writerow([repr(float(v)) for v in data.X[i]] + [int(data.y[i])])
