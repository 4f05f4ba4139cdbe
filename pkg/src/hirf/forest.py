"""Bagged ensembles of NCM trees: offline training, voting, out-of-bag errors."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import (
    BootstrapSet,
    Dataset,
    NormalizationStats,
    bootstrap,
    bootstrap_replicate,
    fit_normalizer,
    left_out,
    normalize,
    normalize_dataset,
)
from .tree import (
    GrowthConfig,
    NcmTree,
    grow,
    predict_proba_batch,
    tree_from_dict,
    tree_to_dict,
)

SOFT = "soft"
HARD = "hard"


@dataclass(frozen=True)
class ForestConfig:
    s: int = 25
    max_depth: int = 16
    trials: int = 10
    class_cap: int = 32
    min_samples: int = 2
    vote_mode: str = SOFT
    unweighted_gain: bool = False
    alpha: float = 0.1

    def __post_init__(self) -> None:
        if self.s < 1:
            raise ValueError("a forest needs at least one tree")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.vote_mode not in (SOFT, HARD):
            raise ValueError(f"vote_mode must be {SOFT!r} or {HARD!r}")

    def growth(self) -> GrowthConfig:
        return GrowthConfig(
            max_depth=self.max_depth,
            trials=self.trials,
            class_cap=self.class_cap,
            min_samples=self.min_samples,
            unweighted_gain=self.unweighted_gain,
        )


@dataclass
class Forest:
    """Trees plus their bootstraps and per-tree error state.

    ``oob`` is the error state used for retrain/update decisions; boosting may
    push it above the raw rate kept in ``oob_raw``. ``oob_flags`` marks trees
    whose left-out set was empty at the last measurement. All feature vectors
    given to ``predict``/``accuracy`` are normalized with the stored stats; the
    trees themselves live in that normalized space.
    """

    trees: list[NcmTree]
    boots: list[BootstrapSet]
    oob: np.ndarray
    oob_raw: np.ndarray
    oob_flags: np.ndarray
    config: ForestConfig
    normalizer: NormalizationStats

    @property
    def s(self) -> int:
        return len(self.trees)

    @property
    def known_classes(self) -> np.ndarray:
        return np.unique(np.concatenate([t.known_classes for t in self.trees]))


@dataclass(frozen=True)
class TrainTimings:
    train_time_ms: float
    grow_time_mean_ms: float


def worker_count() -> int:
    """Intra-round parallelism from HIRF_THREADS (unset/1 = serial, 0 = auto)."""
    raw = os.environ.get("HIRF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def map_tree_tasks(fn, arg_tuples):
    workers = worker_count()
    if workers == 1:
        return [fn(*args) for args in arg_tuples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda args: fn(*args), arg_tuples))


def tree_predict(tree: NcmTree, X: np.ndarray) -> np.ndarray:
    """Per-row argmax label of one tree; X must already be normalized."""
    labels = tree.known_classes
    positions = {int(c): i for i, c in enumerate(labels)}
    P = predict_proba_batch(tree, X, positions, labels.size)
    return labels[np.argmax(P, axis=1)]


def oob_error_flag(tree: NcmTree, boot: BootstrapSet, norm_data: Dataset) -> tuple[float, bool]:
    """Misclassification rate on normalized left-out samples; flag when empty."""
    rest = left_out(norm_data, boot)
    if len(rest) == 0:
        return 0.0, True
    pred = tree_predict(tree, rest.X)
    return float(np.mean(pred != rest.y)), False


def oob_error(forest: Forest, tree_index: int, data: Dataset) -> float:
    """One tree's misclassification rate on the samples its bootstrap left out."""
    norm = normalize_dataset(data, forest.normalizer)
    err, _ = oob_error_flag(forest.trees[tree_index], forest.boots[tree_index], norm)
    return err


def train_offline_timed(
    data: Dataset, config: ForestConfig, rng: np.random.Generator
) -> tuple[Forest, TrainTimings]:
    """Fit the normalizer, grow one tree per bootstrap, measure OOB errors.

    Reported train time is the summed per-tree bootstrap+grow duration, so it
    stays comparable whether trees are built serially or in a thread pool.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    stats = fit_normalizer(data)
    norm = normalize_dataset(data, stats)
    seeds = [int(v) for v in rng.integers(0, 2**63 - 1, size=config.s)]

    def build(i: int, seed: int):
        crng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        boot = bootstrap(norm, crng, tree_index=i)
        replicate = bootstrap_replicate(norm, boot)
        g0 = time.perf_counter()
        tree = grow(replicate, config.growth(), crng)
        g1 = time.perf_counter()
        return boot, tree, g1 - g0, g1 - t0

    results = map_tree_tasks(build, [(i, seeds[i]) for i in range(config.s)])
    boots = [r[0] for r in results]
    trees = [r[1] for r in results]
    grow_times = np.array([r[2] for r in results])
    totals = np.array([r[3] for r in results])

    errors = np.empty(config.s, dtype=np.float64)
    flags = np.empty(config.s, dtype=bool)
    for i in range(config.s):
        errors[i], flags[i] = oob_error_flag(trees[i], boots[i], norm)

    forest = Forest(
        trees=trees,
        boots=boots,
        oob=errors.copy(),
        oob_raw=errors.copy(),
        oob_flags=flags,
        config=config,
        normalizer=stats,
    )
    timings = TrainTimings(
        train_time_ms=float(totals.sum() * 1000.0),
        grow_time_mean_ms=float(grow_times.mean() * 1000.0),
    )
    return forest, timings


def train_offline(data: Dataset, config: ForestConfig, rng: np.random.Generator) -> Forest:
    return train_offline_timed(data, config, rng)[0]


def predict_batch(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Vote over all trees for each row of raw-feature matrix ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("predict_batch expects a 2-D feature matrix")
    Xn = normalize(X, forest.normalizer)
    labels = forest.known_classes
    positions = {int(c): i for i, c in enumerate(labels)}
    scores = np.zeros((X.shape[0], labels.size), dtype=np.float64)
    if forest.config.vote_mode == HARD:
        rows = np.arange(X.shape[0])
        for tree in forest.trees:
            pred = tree_predict(tree, Xn)
            scores[rows, np.searchsorted(labels, pred)] += 1.0
    else:
        for tree in forest.trees:
            scores += predict_proba_batch(tree, Xn, positions, labels.size)
        scores /= len(forest.trees)
    # argmax takes the first maximum, i.e. ties resolve to the smallest label
    return labels[np.argmax(scores, axis=1)]


def predict(forest: Forest, x: np.ndarray) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict takes a single feature vector; use predict_batch for matrices")
    return int(predict_batch(forest, x[None, :])[0])


def accuracy(forest: Forest, test: Dataset) -> float:
    """Fraction of test samples whose predicted label matches the true one."""
    if len(test) == 0:
        raise ValueError("accuracy of an empty test set is undefined")
    return float(np.mean(predict_batch(forest, test.X) == test.y))


def forest_to_dict(forest: Forest) -> dict:
    return {
        "config": asdict(forest.config),
        "normalizer": {
            "mean": [float(v) for v in forest.normalizer.mean],
            "std": [float(v) for v in forest.normalizer.std],
            "constant": [bool(v) for v in forest.normalizer.constant],
        },
        "trees": [tree_to_dict(t) for t in forest.trees],
        "boots": [
            {"tree_index": b.tree_index, "sample_ids": [int(v) for v in b.sample_ids]}
            for b in forest.boots
        ],
        "oob": [float(v) for v in forest.oob],
        "oob_raw": [float(v) for v in forest.oob_raw],
        "oob_flags": [bool(v) for v in forest.oob_flags],
    }


def forest_from_dict(obj: dict) -> Forest:
    stats = NormalizationStats(
        mean=np.asarray(obj["normalizer"]["mean"], dtype=np.float64),
        std=np.asarray(obj["normalizer"]["std"], dtype=np.float64),
        constant=np.asarray(obj["normalizer"]["constant"], dtype=bool),
    )
    return Forest(
        trees=[tree_from_dict(t) for t in obj["trees"]],
        boots=[
            BootstrapSet(
                tree_index=int(b["tree_index"]),
                sample_ids=np.asarray(b["sample_ids"], dtype=np.int64),
            )
            for b in obj["boots"]
        ],
        oob=np.asarray(obj["oob"], dtype=np.float64),
        oob_raw=np.asarray(obj["oob_raw"], dtype=np.float64),
        oob_flags=np.asarray(obj["oob_flags"], dtype=bool),
        config=ForestConfig(**obj["config"]),
        normalizer=stats,
    )


def save_forest(forest: Forest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh)
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path, "r", encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))
