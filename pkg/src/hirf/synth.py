"""Synthetic multiclass Gaussian-blob datasets with guaranteed class separation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic blobs: one centroid per class, ``per_class`` samples around it.

    Centroids are placed so the minimum pairwise distance is ``separation``
    times the cluster std (times 1.0 when std is 0, keeping centers distinct).
    """

    n_classes: int
    per_class: int
    n_features: int
    cluster_std: float = 1.0
    separation: float = 6.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.per_class < 1:
            raise ValueError("need at least 1 sample per class")
        if self.n_features < 1:
            raise ValueError("need at least 1 feature")
        if self.cluster_std < 0:
            raise ValueError("cluster_std must be >= 0")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")


def _lattice_centers(n_classes: int, n_features: int, spacing: float) -> np.ndarray:
    centers = np.zeros((n_classes, n_features))
    centers[:, 0] = (np.arange(n_classes) - (n_classes - 1) / 2.0) * spacing
    return centers


def _separated_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    target = spec.separation * (spec.cluster_std if spec.cluster_std > 0 else 1.0)
    if spec.n_features == 1:
        return _lattice_centers(spec.n_classes, 1, target)
    for _ in range(64):
        dirs = rng.standard_normal((spec.n_classes, spec.n_features))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        if (norms == 0).any():
            continue
        dirs /= norms
        diff = dirs[:, None, :] - dirs[None, :, :]
        dists = np.sqrt((diff**2).sum(axis=2))
        dmin = dists[np.triu_indices(spec.n_classes, k=1)].min()
        if dmin > 1e-9:
            return dirs * (target / dmin)
    return _lattice_centers(spec.n_classes, spec.n_features, target)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Blob dataset with labels 1..C; deterministic for a fixed spec seed."""
    rng = np.random.default_rng(spec.seed)
    centers = _separated_centers(spec, rng)
    n = spec.n_classes * spec.per_class
    X = np.empty((n, spec.n_features))
    y = np.empty(n, dtype=np.int64)
    for c in range(spec.n_classes):
        rows = slice(c * spec.per_class, (c + 1) * spec.per_class)
        noise = rng.standard_normal((spec.per_class, spec.n_features))
        X[rows] = centers[c] + spec.cluster_std * noise
        y[rows] = c + 1
    return Dataset(np.arange(n, dtype=np.int64), X, y)
