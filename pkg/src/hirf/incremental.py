"""The hi-RF round engine.

Each arrival round: measure every tree's out-of-bag error against the grown
dataset, fit a Gaussian to the error vector by maximum likelihood and use its
mean as the retrain/update threshold, regrow the trees above the threshold
from fresh bootstraps (RRN), refresh only the leaf probabilities of the rest
(RLP), then boost the retained trees' recorded errors so they drift toward
retraining in later rounds (OOB boosting).

The boost is carried across rounds as the gap between a tree's stored error
state and its raw measured rate: freshly measured errors are re-inflated by
that gap before the next threshold fit, so a tree kept on leaf refreshes
becomes progressively more likely to be replaced.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import (
    ArrivalSchedule,
    Dataset,
    bootstrap,
    bootstrap_replicate,
    concat_datasets,
    fit_normalizer,
    normalize_dataset,
    split_by_schedule,
)
from .forest import (
    Forest,
    ForestConfig,
    accuracy,
    map_tree_tasks,
    oob_error_flag,
    train_offline_timed,
)
from .tree import grow, refresh_leaves

RETRAIN = "retrain"
UPDATE = "update"


@dataclass(frozen=True)
class OobState:
    """Gaussian fitted to an out-of-bag error vector; the mean is the threshold."""

    errors: np.ndarray
    mean: float
    variance: float
    threshold: float


def oob_estimation(errors: Sequence[float] | np.ndarray) -> OobState:
    """Closed-form Gaussian MLE over the error vector: mean and population variance."""
    arr = np.asarray(errors, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("need a 1-D vector with at least one error value")
    mu = float(arr.mean())
    var = float(arr.var())
    return OobState(errors=arr.copy(), mean=mu, variance=var, threshold=mu)


def classify_trees(state: OobState, errors: Sequence[float] | np.ndarray) -> list[str]:
    """Retrain trees with error above the threshold, update the rest (ties update)."""
    return [RETRAIN if float(e) > state.threshold else UPDATE
            for e in np.asarray(errors, dtype=np.float64)]


def oob_boosting(
    errors: Sequence[float] | np.ndarray, decisions: Sequence[str], alpha: float
) -> np.ndarray:
    """o + alpha*tanh(o) for trees kept on leaf updates; retrained trees unchanged."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    arr = np.asarray(errors, dtype=np.float64).copy()
    if len(decisions) != arr.size:
        raise ValueError("decisions and errors must have the same length")
    mask = np.array([d == UPDATE for d in decisions], dtype=bool)
    arr[mask] = arr[mask] + alpha * np.tanh(arr[mask])
    return arr


@dataclass
class RoundReport:
    """Bookkeeping for one arrival round (times in wall-clock milliseconds)."""

    round_index: int
    n_retrained: int
    n_updated: int
    threshold: float
    decisions: list[str]
    accuracy_after: float
    train_time_ms: float
    test_time_ms: float
    grow_time_mean_ms: float
    update_time_mean_ms: float
    errors_measured: list[float]
    errors_fed: list[float]
    flagged: list[int]
    n_known_classes: int
    accuracy_offline: float | None = None
    offline_train_time_ms: float | None = None
    offline_test_time_ms: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _measure_errors(forest: Forest, norm: Dataset) -> tuple[np.ndarray, np.ndarray]:
    errors = np.empty(forest.s, dtype=np.float64)
    flags = np.empty(forest.s, dtype=bool)
    for i in range(forest.s):
        errors[i], flags[i] = oob_error_flag(forest.trees[i], forest.boots[i], norm)
    return errors, flags


def absorb_batch(
    forest: Forest,
    old_data: Dataset,
    new_data: Dataset,
    config: ForestConfig,
    rng: np.random.Generator,
    test_data: Dataset | None = None,
) -> tuple[Forest, RoundReport]:
    """Absorb one batch of data (typically new classes) into the forest.

    Refits the normalizer on old+new, re-measures every tree's out-of-bag
    error there (stored bootstraps leave all new samples out, so stale trees
    look bad on unfamiliar classes), thresholds at the fitted mean, regrows
    the trees above it and refreshes the leaves of the rest, then re-measures
    and boosts. ``accuracy_after`` is evaluated on ``test_data`` when given,
    else on the combined training data.
    """
    if len(new_data) == 0:
        raise ValueError("new_data must contain at least one sample")
    data = concat_datasets(old_data, new_data)
    stats = fit_normalizer(data)
    norm = normalize_dataset(data, stats)

    measured, _ = _measure_errors(forest, norm)
    carried_boost = np.maximum(forest.oob - forest.oob_raw, 0.0)
    fed = measured + carried_boost
    state = oob_estimation(fed)
    decisions = classify_trees(state, fed)

    seeds = [int(v) for v in rng.integers(0, 2**63 - 1, size=forest.s)]

    def rebuild(i: int, seed: int):
        crng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        boot = bootstrap(norm, crng, tree_index=i)
        replicate = bootstrap_replicate(norm, boot)
        w0 = time.perf_counter()
        if decisions[i] == RETRAIN:
            tree = grow(replicate, config.growth(), crng)
        else:
            tree = refresh_leaves(forest.trees[i], replicate)
        w1 = time.perf_counter()
        return boot, tree, w1 - w0, w1 - t0

    results = map_tree_tasks(rebuild, [(i, seeds[i]) for i in range(forest.s)])
    boots = [r[0] for r in results]
    trees = [r[1] for r in results]
    work = np.array([r[2] for r in results])
    totals = np.array([r[3] for r in results])
    retrain_mask = np.array([d == RETRAIN for d in decisions], dtype=bool)

    new_forest = Forest(
        trees=trees,
        boots=boots,
        oob=np.zeros(forest.s),
        oob_raw=np.zeros(forest.s),
        oob_flags=np.zeros(forest.s, dtype=bool),
        config=config,
        normalizer=stats,
    )
    raw_after, flags_after = _measure_errors(new_forest, norm)
    carried_after = np.where(retrain_mask, 0.0, carried_boost)
    boosted = oob_boosting(raw_after + carried_after, decisions, config.alpha)
    new_forest.oob = boosted
    new_forest.oob_raw = raw_after
    new_forest.oob_flags = flags_after

    eval_data = test_data if test_data is not None and len(test_data) > 0 else data
    e0 = time.perf_counter()
    acc = accuracy(new_forest, eval_data)
    test_time = time.perf_counter() - e0

    n_retrained = int(retrain_mask.sum())
    report = RoundReport(
        round_index=0,
        n_retrained=n_retrained,
        n_updated=forest.s - n_retrained,
        threshold=state.threshold,
        decisions=list(decisions),
        accuracy_after=acc,
        train_time_ms=float(totals.sum() * 1000.0),
        test_time_ms=float(test_time * 1000.0),
        grow_time_mean_ms=float(work[retrain_mask].mean() * 1000.0) if n_retrained else 0.0,
        update_time_mean_ms=(
            float(work[~retrain_mask].mean() * 1000.0) if n_retrained < forest.s else 0.0
        ),
        errors_measured=[float(v) for v in measured],
        errors_fed=[float(v) for v in fed],
        flagged=[int(i) for i in np.nonzero(flags_after)[0]],
        n_known_classes=int(new_forest.known_classes.size),
    )
    return new_forest, report


def _filtered_test(test_data: Dataset | None, labels: set[int]) -> Dataset | None:
    if test_data is None:
        return None
    return test_data.restrict_labels(labels)


def run_schedule(
    data: Dataset,
    sched: ArrivalSchedule,
    config: ForestConfig,
    rng: np.random.Generator,
    test_data: Dataset | None = None,
) -> tuple[list[RoundReport], Forest]:
    """Train offline on the initial classes, then absorb each batch in order.

    Every round also trains and times a from-scratch forest on the cumulative
    data for comparison; its metrics land in the report's offline fields.
    Accuracy is measured on the slice of ``test_data`` whose labels have been
    seen so far (on the cumulative training data when no test set is given).
    For the initial round the baseline reuses the same seed, so both columns
    describe the identical forest and differ only in wall-clock noise.
    """
    initial, batches = split_by_schedule(data, sched)
    reports: list[RoundReport] = []
    seen = set(sched.initial)

    seed0 = int(rng.integers(0, 2**63 - 1))
    forest, timings = train_offline_timed(initial, config, np.random.default_rng(seed0))
    eval0 = _filtered_test(test_data, seen)
    eval0 = eval0 if eval0 is not None and len(eval0) > 0 else initial
    e0 = time.perf_counter()
    acc0 = accuracy(forest, eval0)
    test_time0 = time.perf_counter() - e0

    baseline, base_timings = train_offline_timed(initial, config, np.random.default_rng(seed0))
    b0 = time.perf_counter()
    base_acc0 = accuracy(baseline, eval0)
    base_test0 = time.perf_counter() - b0

    state0 = oob_estimation(forest.oob)
    reports.append(
        RoundReport(
            round_index=0,
            n_retrained=forest.s,
            n_updated=0,
            threshold=state0.threshold,
            decisions=[RETRAIN] * forest.s,
            accuracy_after=acc0,
            train_time_ms=timings.train_time_ms,
            test_time_ms=float(test_time0 * 1000.0),
            grow_time_mean_ms=timings.grow_time_mean_ms,
            update_time_mean_ms=0.0,
            errors_measured=[float(v) for v in forest.oob_raw],
            errors_fed=[float(v) for v in forest.oob_raw],
            flagged=[int(i) for i in np.nonzero(forest.oob_flags)[0]],
            n_known_classes=int(forest.known_classes.size),
            accuracy_offline=base_acc0,
            offline_train_time_ms=base_timings.train_time_ms,
            offline_test_time_ms=float(base_test0 * 1000.0),
        )
    )

    cumulative = initial
    for r, batch in enumerate(batches, start=1):
        seen |= set(sched.batches[r - 1])
        eval_r = _filtered_test(test_data, seen)
        absorb_rng = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
        forest, report = absorb_batch(forest, cumulative, batch, config, absorb_rng,
                                      test_data=eval_r)
        cumulative = concat_datasets(cumulative, batch)

        base_rng = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
        baseline, base_timings = train_offline_timed(cumulative, config, base_rng)
        eval_b = eval_r if eval_r is not None and len(eval_r) > 0 else cumulative
        b0 = time.perf_counter()
        base_acc = accuracy(baseline, eval_b)
        base_test = time.perf_counter() - b0

        report.round_index = r
        report.accuracy_offline = base_acc
        report.offline_train_time_ms = base_timings.train_time_ms
        report.offline_test_time_ms = float(base_test * 1000.0)
        reports.append(report)

    return reports, forest


def sweep_initial_counts(
    data: Dataset,
    counts: Sequence[int],
    config: ForestConfig,
    rng: np.random.Generator,
    test_data: Dataset | None = None,
) -> list[dict]:
    """One absorb of the remaining classes per initial-class count.

    For each count n the first n labels (sorted) form the initial set and the
    rest arrive as a single batch; the final round's hi-RF and offline metrics
    are returned as one plot-ready row per n.
    """
    classes = [int(c) for c in data.class_set]
    rows: list[dict] = []
    for n in counts:
        if not 1 <= n <= len(classes):
            raise ValueError(f"initial count {n} out of range for {len(classes)} classes")
        batches = (tuple(classes[n:]),) if n < len(classes) else ()
        sched = ArrivalSchedule(initial=tuple(classes[:n]), batches=batches)
        child = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
        reports, _ = run_schedule(data, sched, config, child, test_data=test_data)
        last = reports[-1]
        rows.append(
            {
                "initial_classes": int(n),
                "accuracy_hirf": last.accuracy_after,
                "accuracy_offline": last.accuracy_offline,
                "train_time_hirf_ms": last.train_time_ms,
                "train_time_offline_ms": last.offline_train_time_ms,
                "test_time_hirf_ms": last.test_time_ms,
                "test_time_offline_ms": last.offline_test_time_ms,
                "n_retrained": last.n_retrained,
                "n_updated": last.n_updated,
                "threshold": last.threshold,
            }
        )
    return rows
