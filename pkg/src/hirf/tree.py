"""Nearest-class-mean decision trees.

An internal node holds centroids for a handful of classes, split into a left
and a right group; a sample is routed to the side owning its nearest
centroid. Leaves hold class-probability vectors. Because the split functions
depend only on centroids, the leaf probabilities can later be regenerated
from new data without touching any split, which is what makes cheap
incremental updates of a whole forest possible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .data import Dataset

LEFT = "left"
RIGHT = "right"

# Above this many element-wise distance terms, fall back to a matmul-based
# distance (less exact in the last ulp but O(n*c) memory instead of O(n*c*k)).
_DIRECT_DISTANCE_LIMIT = 1 << 24


@dataclass(frozen=True)
class GrowthConfig:
    """Knobs for growing a single tree.

    trials        random class assignments scored per node
    class_cap     most classes considered at one node
    min_samples   nodes smaller than this become leaves
    unweighted_gain   subtract child entropies without size weights
    max_resamples retries when a random assignment leaves one side empty
    """

    max_depth: int = 16
    trials: int = 10
    class_cap: int = 32
    min_samples: int = 2
    unweighted_gain: bool = False
    max_resamples: int = 50


@dataclass(frozen=True)
class CentroidSet:
    """Class centroids at a node; labels are stored sorted ascending."""

    labels: np.ndarray
    centroids: np.ndarray


@dataclass(frozen=True)
class SplitCandidate:
    """A left/right assignment of centroid classes and its information gain."""

    labels: np.ndarray
    goes_left: np.ndarray
    gain: float

    def assignment(self) -> dict[int, str]:
        return {int(c): (LEFT if g else RIGHT) for c, g in zip(self.labels, self.goes_left)}


@dataclass(frozen=True)
class LeafNode:
    labels: np.ndarray
    probs: np.ndarray
    support: int


@dataclass(frozen=True)
class InternalNode:
    centroids: CentroidSet
    goes_left: np.ndarray
    left: "NcmNode"
    right: "NcmNode"


NcmNode = Union[LeafNode, InternalNode]


@dataclass(frozen=True)
class NcmTree:
    root: NcmNode
    max_depth: int
    known_classes: np.ndarray
    n_features: int


def _centroids_arrays(X: np.ndarray, y: np.ndarray, labels: np.ndarray) -> CentroidSet:
    cents = np.empty((labels.size, X.shape[1]), dtype=np.float64)
    for j, lab in enumerate(labels):
        mask = y == lab
        if not mask.any():
            raise ValueError(f"class {int(lab)} has no samples")
        cents[j] = X[mask].mean(axis=0)
    return CentroidSet(labels=labels, centroids=cents)


def class_centroids(data: Dataset, classes: Iterable[int]) -> CentroidSet:
    """Mean feature vector per requested class; every class must be present."""
    labels = np.unique(np.asarray(list(classes), dtype=np.int64))
    if labels.size == 0:
        raise ValueError("no classes requested")
    return _centroids_arrays(data.X, data.y, labels)


def _nearest_index(X: np.ndarray, cset: CentroidSet) -> np.ndarray:
    """Index of the nearest centroid per row; ties go to the smallest label.

    Labels are sorted and argmin returns the first minimum, so the tie rule
    falls out of the exact squared-distance computation.
    """
    n, k = X.shape
    c = cset.centroids.shape[0]
    if n * c * k <= _DIRECT_DISTANCE_LIMIT:
        d = ((X[:, None, :] - cset.centroids[None, :, :]) ** 2).sum(axis=2)
    else:
        d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ cset.centroids.T
        d += (cset.centroids * cset.centroids).sum(axis=1)[None, :]
    return np.argmin(d, axis=1)


def route(x: np.ndarray, node: InternalNode) -> str:
    """Side of the child owning the centroid nearest to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (node.centroids.centroids.shape[1],):
        raise ValueError("feature dimension does not match the node's centroids")
    j = _nearest_index(x[None, :], node.centroids)[0]
    return LEFT if node.goes_left[j] else RIGHT


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def information_gain(parent: Dataset, left: Dataset, right: Dataset, weighted: bool = True) -> float:
    """Entropy reduction of splitting ``parent`` into ``left`` and ``right``.

    ``weighted`` scales child entropies by their sample share (the default);
    without it the child entropies are subtracted as-is.
    """
    if len(left) + len(right) != len(parent):
        raise ValueError("left and right must partition the parent dataset")
    if len(parent) == 0:
        return 0.0
    labels = np.unique(parent.y)
    c_parent = np.bincount(np.searchsorted(labels, parent.y), minlength=labels.size)
    c_left = np.bincount(np.searchsorted(labels, left.y), minlength=labels.size)
    c_right = np.bincount(np.searchsorted(labels, right.y), minlength=labels.size)
    e_parent, e_left, e_right = _entropy(c_parent), _entropy(c_left), _entropy(c_right)
    if weighted:
        return e_parent - (len(left) / len(parent)) * e_left - (len(right) / len(parent)) * e_right
    return e_parent - e_left - e_right


def _mask_to_bits(mask: int, n: int) -> np.ndarray:
    return np.array([(mask >> j) & 1 for j in range(n)], dtype=bool)


def _iter_assignments(n_classes: int, trials: int, rng: np.random.Generator, max_resamples: int):
    """Candidate left/right assignments, both sides non-empty.

    When ``trials`` covers the whole space (2^n - 2 admissible assignments),
    the space is enumerated in a fixed order instead of sampled, making the
    search exhaustive and rng-independent.
    """
    total = (1 << n_classes) - 2
    if trials >= total:
        for mask in range(1, total + 1):
            yield _mask_to_bits(mask, n_classes)
        return
    for _ in range(trials):
        for _ in range(max_resamples + 1):
            bits = rng.integers(0, 2, size=n_classes).astype(bool)
            if bits.any() and not bits.all():
                break
        else:
            raise RuntimeError("failed to draw an admissible class assignment")
        yield bits


def _best_split_arrays(
    X: np.ndarray,
    y: np.ndarray,
    cset: CentroidSet,
    trials: int,
    rng: np.random.Generator,
    unweighted_gain: bool,
    max_resamples: int,
) -> tuple[SplitCandidate, np.ndarray]:
    """Best candidate plus the left-side sample mask it induces."""
    nearest = _nearest_index(X, cset)
    labels, codes = np.unique(y, return_inverse=True)
    counts_all = np.bincount(codes, minlength=labels.size)
    e_parent = _entropy(counts_all)
    n = y.size

    best_gain = -np.inf
    best_bits: np.ndarray | None = None
    best_lmask: np.ndarray | None = None
    for bits in _iter_assignments(cset.labels.size, trials, rng, max_resamples):
        lmask = bits[nearest]
        c_left = np.bincount(codes[lmask], minlength=labels.size)
        c_right = counts_all - c_left
        n_left = int(lmask.sum())
        if unweighted_gain:
            gain = e_parent - _entropy(c_left) - _entropy(c_right)
        else:
            gain = e_parent - (n_left / n) * _entropy(c_left) - ((n - n_left) / n) * _entropy(c_right)
        if gain > best_gain:
            best_gain, best_bits, best_lmask = gain, bits.copy(), lmask
    assert best_bits is not None and best_lmask is not None
    cand = SplitCandidate(labels=cset.labels, goes_left=best_bits, gain=float(best_gain))
    return cand, best_lmask


def choose_best_split(
    data: Dataset,
    centroids: CentroidSet,
    trials: int,
    rng: np.random.Generator,
    unweighted_gain: bool = False,
    max_resamples: int = 50,
) -> SplitCandidate:
    """Highest-gain random left/right assignment of the centroid classes.

    Draws ``trials`` assignments (first drawn wins ties); with trials large
    enough to cover the space the search enumerates every admissible
    assignment.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if centroids.labels.size < 2:
        raise ValueError("need at least two centroid classes to split")
    if np.unique(data.y).size < 2:
        raise ValueError("only one class observed; the node should be a leaf")
    cand, _ = _best_split_arrays(
        data.X, data.y, centroids, trials, rng, unweighted_gain, max_resamples
    )
    return cand


def grow(data: Dataset, config: GrowthConfig, rng: np.random.Generator) -> NcmTree:
    """Grow a tree: sample a class subset per node, split on nearest centroids.

    A node becomes a leaf when it is pure, at max_depth, smaller than
    min_samples, or when the best split routes every sample to one side.
    """
    if len(data) == 0:
        raise ValueError("cannot grow a tree from an empty dataset")
    X, y = data.X, data.y

    def make_leaf(rows: np.ndarray) -> LeafNode:
        labels, counts = np.unique(y[rows], return_counts=True)
        return LeafNode(labels=labels, probs=counts / counts.sum(), support=int(rows.size))

    def build(rows: np.ndarray, depth: int) -> NcmNode:
        observed = np.unique(y[rows])
        if observed.size == 1 or depth >= config.max_depth or rows.size < config.min_samples:
            return make_leaf(rows)
        if observed.size > config.class_cap:
            chosen = np.sort(rng.choice(observed, size=config.class_cap, replace=False))
        else:
            chosen = observed
        cset = _centroids_arrays(X[rows], y[rows], chosen)
        try:
            cand, lmask = _best_split_arrays(
                X[rows], y[rows], cset, config.trials, rng,
                config.unweighted_gain, config.max_resamples,
            )
        except RuntimeError:
            return make_leaf(rows)
        left_rows = rows[lmask]
        right_rows = rows[~lmask]
        if left_rows.size == 0 or right_rows.size == 0:
            return make_leaf(rows)
        return InternalNode(
            centroids=cset,
            goes_left=cand.goes_left,
            left=build(left_rows, depth + 1),
            right=build(right_rows, depth + 1),
        )

    root = build(np.arange(len(data), dtype=np.int64), 0)
    return NcmTree(root=root, max_depth=config.max_depth,
                   known_classes=np.unique(y), n_features=data.n_features)


def predict_proba(tree: NcmTree, x: np.ndarray) -> dict[int, float]:
    """Leaf probability map reached by ``x``; absent classes have probability 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.n_features,):
        raise ValueError(f"expected a feature vector of length {tree.n_features}")
    node = tree.root
    while isinstance(node, InternalNode):
        j = _nearest_index(x[None, :], node.centroids)[0]
        node = node.left if node.goes_left[j] else node.right
    return {int(c): float(p) for c, p in zip(node.labels, node.probs)}


def collect_leaves(tree: NcmTree) -> list[LeafNode]:
    """Leaves in depth-first (left before right) order."""
    out: list[LeafNode] = []

    def walk(node: NcmNode) -> None:
        if isinstance(node, LeafNode):
            out.append(node)
            return
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    return out


def leaf_assignments(tree: NcmTree, X: np.ndarray) -> np.ndarray:
    """Depth-first leaf index each row of ``X`` lands in."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != tree.n_features:
        raise ValueError(f"expected a matrix with {tree.n_features} feature columns")
    out = np.empty(X.shape[0], dtype=np.int64)
    counter = 0

    def walk(node: NcmNode, rows: np.ndarray) -> None:
        nonlocal counter
        if isinstance(node, LeafNode):
            out[rows] = counter
            counter += 1
            return
        if rows.size:
            j = _nearest_index(X[rows], node.centroids)
            lmask = node.goes_left[j]
        else:
            lmask = np.zeros(0, dtype=bool)
        walk(node.left, rows[lmask])
        walk(node.right, rows[~lmask])

    walk(tree.root, np.arange(X.shape[0], dtype=np.int64))
    return out


def predict_proba_batch(
    tree: NcmTree, X: np.ndarray, label_positions: dict[int, int], n_labels: int
) -> np.ndarray:
    """Per-row probability matrix over a caller-supplied global label order."""
    P = np.zeros((X.shape[0], n_labels), dtype=np.float64)
    assign = leaf_assignments(tree, X)
    for j, leaf in enumerate(collect_leaves(tree)):
        rows = np.nonzero(assign == j)[0]
        if rows.size == 0:
            continue
        cols = np.fromiter((label_positions[int(c)] for c in leaf.labels), dtype=np.int64)
        P[rows[:, None], cols[None, :]] = leaf.probs
    return P


def refresh_leaves(tree: NcmTree, data: Dataset) -> NcmTree:
    """New tree with identical splits and leaf probabilities recounted from ``data``.

    Leaves that receive no samples keep their previous distribution — wiping
    them would erase classes the refresh data happened not to resample.
    """
    assign = leaf_assignments(tree, data.X)
    new_leaves: list[LeafNode] = []
    for j, old in enumerate(collect_leaves(tree)):
        rows = np.nonzero(assign == j)[0]
        if rows.size == 0:
            new_leaves.append(old)
            continue
        labels, counts = np.unique(data.y[rows], return_counts=True)
        new_leaves.append(LeafNode(labels=labels, probs=counts / counts.sum(),
                                   support=int(rows.size)))
    leaf_iter = iter(new_leaves)

    def rebuild(node: NcmNode) -> NcmNode:
        if isinstance(node, LeafNode):
            return next(leaf_iter)
        return InternalNode(centroids=node.centroids, goes_left=node.goes_left,
                            left=rebuild(node.left), right=rebuild(node.right))

    root = rebuild(tree.root)
    known = np.unique(np.concatenate([tree.known_classes, data.y]))
    return NcmTree(root=root, max_depth=tree.max_depth,
                   known_classes=known, n_features=tree.n_features)


def _node_to_dict(node: NcmNode) -> dict:
    if isinstance(node, LeafNode):
        return {
            "kind": "leaf",
            "probs": {str(int(c)): float(p) for c, p in zip(node.labels, node.probs)},
            "support": node.support,
        }
    return {
        "kind": "internal",
        "labels": [int(c) for c in node.centroids.labels],
        "centroids": [[float(v) for v in row] for row in node.centroids.centroids],
        "assignment": {
            str(int(c)): (LEFT if g else RIGHT)
            for c, g in zip(node.centroids.labels, node.goes_left)
        },
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(obj: dict) -> NcmNode:
    if obj["kind"] == "leaf":
        items = sorted(((int(c), float(p)) for c, p in obj["probs"].items()))
        return LeafNode(
            labels=np.array([c for c, _ in items], dtype=np.int64),
            probs=np.array([p for _, p in items], dtype=np.float64),
            support=int(obj["support"]),
        )
    labels = np.asarray(obj["labels"], dtype=np.int64)
    cset = CentroidSet(labels=labels, centroids=np.asarray(obj["centroids"], dtype=np.float64))
    goes_left = np.array([obj["assignment"][str(int(c))] == LEFT for c in labels], dtype=bool)
    return InternalNode(centroids=cset, goes_left=goes_left,
                        left=_node_from_dict(obj["left"]), right=_node_from_dict(obj["right"]))


def tree_to_dict(tree: NcmTree) -> dict:
    return {
        "max_depth": tree.max_depth,
        "n_features": tree.n_features,
        "known_classes": [int(c) for c in tree.known_classes],
        "root": _node_to_dict(tree.root),
    }


def tree_from_dict(obj: dict) -> NcmTree:
    return NcmTree(
        root=_node_from_dict(obj["root"]),
        max_depth=int(obj["max_depth"]),
        known_classes=np.asarray(obj["known_classes"], dtype=np.int64),
        n_features=int(obj["n_features"]),
    )


def structure_hash(tree: NcmTree) -> str:
    """Hash of the internal-node structure only; leaf contents are ignored."""

    def strip(node: NcmNode) -> dict:
        if isinstance(node, LeafNode):
            return {"kind": "leaf"}
        return {
            "kind": "internal",
            "labels": [int(c) for c in node.centroids.labels],
            "centroids": [[float(v) for v in row] for row in node.centroids.centroids],
            "goes_left": [bool(g) for g in node.goes_left],
            "left": strip(node.left),
            "right": strip(node.right),
        }

    payload = json.dumps(strip(tree.root), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
