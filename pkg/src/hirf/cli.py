"""Experiment driver: schedule runs and initial-class sweeps with CSV/JSONL reports."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ArrivalSchedule, Dataset, load_csv_dataset, load_schedule
from .forest import Forest, ForestConfig, HARD, SOFT, save_forest
from .incremental import RoundReport, run_schedule, sweep_initial_counts
from .synth import SyntheticSpec, generate_synthetic

RESULTS_CSV_COLUMNS = [
    "round",
    "accuracy_hirf",
    "accuracy_offline",
    "train_time_hirf_ms",
    "train_time_offline_ms",
    "test_time_hirf_ms",
    "test_time_offline_ms",
    "n_retrained",
    "n_updated",
    "threshold",
]

SWEEP_CSV_COLUMNS = [
    "initial_classes",
    "accuracy_hirf",
    "accuracy_offline",
    "train_time_hirf_ms",
    "train_time_offline_ms",
    "test_time_hirf_ms",
    "test_time_offline_ms",
    "n_retrained",
    "n_updated",
    "threshold",
]

_INT_COLUMNS = {"round", "initial_classes", "n_retrained", "n_updated"}


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one run needs: data source, schedule, forest config, outputs."""

    out_dir: Path
    seed: int
    config: ForestConfig
    data_path: Path | None = None
    synthetic: SyntheticSpec | None = None
    schedule_path: Path | None = None
    initial_count: int = 5
    step_size: int = 1
    test_fraction: float = 0.2


@dataclass(frozen=True)
class BenchmarkRecord:
    round: int
    accuracy_hirf: float
    accuracy_offline: float
    train_time_hirf_ms: float
    train_time_offline_ms: float
    test_time_hirf_ms: float
    test_time_offline_ms: float
    n_retrained: int
    n_updated: int
    threshold: float

    def to_row(self) -> list[str]:
        return [format_value(name, getattr(self, name)) for name in RESULTS_CSV_COLUMNS]

    @classmethod
    def from_row(cls, row: list[str]) -> "BenchmarkRecord":
        kwargs = {}
        for name, cell in zip(RESULTS_CSV_COLUMNS, row):
            kwargs[name] = int(cell) if name in _INT_COLUMNS else float(cell)
        return cls(**kwargs)


def format_value(column: str, value) -> str:
    """Ints verbatim, floats with 9 significant digits (round-trip stable)."""
    if column in _INT_COLUMNS:
        return str(int(value))
    return "%.9g" % float(value)


def record_from_report(report: RoundReport) -> BenchmarkRecord:
    return BenchmarkRecord(
        round=report.round_index,
        accuracy_hirf=report.accuracy_after,
        accuracy_offline=report.accuracy_offline,
        train_time_hirf_ms=report.train_time_ms,
        train_time_offline_ms=report.offline_train_time_ms,
        test_time_hirf_ms=report.test_time_ms,
        test_time_offline_ms=report.offline_test_time_ms,
        n_retrained=report.n_retrained,
        n_updated=report.n_updated,
        threshold=report.threshold,
    )


def write_csv(path: Path, columns: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(columns)] + [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results_csv(path: Path) -> list[BenchmarkRecord]:
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0].split(",") != RESULTS_CSV_COLUMNS:
        raise ValueError(f"{path} is not a results.csv file")
    return [BenchmarkRecord.from_row(line.split(",")) for line in lines[1:]]


def stratified_split(
    data: Dataset, test_fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """Per-class random split; every class keeps at least one training sample."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    test_rows: list[np.ndarray] = []
    train_rows: list[np.ndarray] = []
    for label in data.class_set:
        rows = np.nonzero(data.y == label)[0]
        rows = rows[rng.permutation(rows.size)]
        n_test = int(round(test_fraction * rows.size))
        if test_fraction > 0 and rows.size >= 2:
            n_test = min(max(n_test, 1), rows.size - 1)
        else:
            n_test = 0
        test_rows.append(rows[:n_test])
        train_rows.append(rows[n_test:])
    train_idx = np.sort(np.concatenate(train_rows))
    test_idx = np.sort(np.concatenate(test_rows)) if test_rows else np.empty(0, dtype=np.int64)
    return data.take_rows(train_idx), data.take_rows(test_idx)


def build_schedule(classes: list[int], initial_count: int, step_size: int) -> ArrivalSchedule:
    if not 1 <= initial_count <= len(classes):
        raise ValueError(f"initial count {initial_count} out of range")
    if step_size < 1:
        raise ValueError("step size must be >= 1")
    rest = classes[initial_count:]
    batches = tuple(
        tuple(rest[i : i + step_size]) for i in range(0, len(rest), step_size)
    )
    return ArrivalSchedule(initial=tuple(classes[:initial_count]), batches=batches)


def _load_data(spec: ExperimentSpec, data_seed: int) -> Dataset:
    if spec.data_path is not None:
        return load_csv_dataset(spec.data_path)
    synth = spec.synthetic
    if synth is None:
        raise ValueError("either a dataset path or a synthetic spec is required")
    if synth.seed is None:
        synth = dataclasses.replace(synth, seed=data_seed)
    return generate_synthetic(synth)


def _print_run_summary(records: list[BenchmarkRecord]) -> None:
    header = f"{'round':>5} {'acc_hirf':>9} {'acc_off':>9} {'n1':>4} {'n2':>4} " \
             f"{'threshold':>10} {'t_hirf_ms':>11} {'t_off_ms':>11}"
    print(header)
    for rec in records:
        print(
            f"{rec.round:>5} {rec.accuracy_hirf:>9.4f} {rec.accuracy_offline:>9.4f} "
            f"{rec.n_retrained:>4} {rec.n_updated:>4} {rec.threshold:>10.4f} "
            f"{rec.train_time_hirf_ms:>11.1f} {rec.train_time_offline_ms:>11.1f}"
        )


def cmd_run(spec: ExperimentSpec) -> int:
    master = np.random.default_rng(spec.seed)
    data_seed, split_seed, run_seed = (int(v) for v in master.integers(0, 2**63 - 1, size=3))
    data = _load_data(spec, data_seed)

    if spec.schedule_path is not None:
        sched = load_schedule(spec.schedule_path)
    else:
        sched = build_schedule([int(c) for c in data.class_set],
                               spec.initial_count, spec.step_size)

    train, test = stratified_split(data, spec.test_fraction, np.random.default_rng(split_seed))
    test_arg = test if len(test) > 0 else None
    reports, forest = run_schedule(train, sched, spec.config,
                                   np.random.default_rng(run_seed), test_data=test_arg)

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    records = [record_from_report(r) for r in reports]
    write_csv(spec.out_dir / "results.csv", RESULTS_CSV_COLUMNS,
              [rec.to_row() for rec in records])
    with open(spec.out_dir / "rounds.jsonl", "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict()) + "\n")
    save_forest(forest, spec.out_dir / "forest_final.json")

    _print_run_summary(records)
    print(f"wrote {spec.out_dir / 'results.csv'}")
    return 0


def cmd_sweep(spec: ExperimentSpec, counts: list[int]) -> int:
    master = np.random.default_rng(spec.seed)
    data_seed, split_seed, run_seed = (int(v) for v in master.integers(0, 2**63 - 1, size=3))
    data = _load_data(spec, data_seed)
    train, test = stratified_split(data, spec.test_fraction, np.random.default_rng(split_seed))
    test_arg = test if len(test) > 0 else None
    rows = sweep_initial_counts(train, counts, spec.config,
                                np.random.default_rng(run_seed), test_data=test_arg)

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    formatted = [
        [format_value(col, row[col]) for col in SWEEP_CSV_COLUMNS] for row in rows
    ]
    write_csv(spec.out_dir / "sweep.csv", SWEEP_CSV_COLUMNS, formatted)

    print(f"{'initial':>8} {'acc_hirf':>9} {'acc_off':>9} {'t_hirf_ms':>11} {'t_off_ms':>11}")
    for row in rows:
        print(
            f"{row['initial_classes']:>8} {row['accuracy_hirf']:>9.4f} "
            f"{row['accuracy_offline']:>9.4f} {row['train_time_hirf_ms']:>11.1f} "
            f"{row['train_time_offline_ms']:>11.1f}"
        )
    print(f"wrote {spec.out_dir / 'sweep.csv'}")
    return 0


def _parse_synthetic(text: str) -> SyntheticSpec:
    parts = text.split(",")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("expected C,N,K[,STD]")
    try:
        n_classes, per_class, dim = (int(p) for p in parts[:3])
        std = float(parts[3]) if len(parts) == 4 else 1.0
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad synthetic spec {text!r}") from exc
    return SyntheticSpec(n_classes=n_classes, per_class=per_class,
                         n_features=dim, cluster_std=std)


def _parse_counts(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad counts list {text!r}") from exc


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, default=None, help="dataset CSV (features then label)")
    p.add_argument("--synthetic", type=_parse_synthetic, default=None,
                   metavar="C,N,K[,STD]", help="generate blobs instead of loading a CSV")
    p.add_argument("--trees", type=int, default=25, help="number of trees")
    p.add_argument("--alpha", type=float, default=0.1, help="boosting learning rate")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--max-depth", type=int, default=16)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--class-cap", type=int, default=32)
    p.add_argument("--min-samples", type=int, default=2)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--hard-vote", action="store_true", help="majority vote over tree argmaxes")
    p.add_argument("--paper-literal-gain", action="store_true", dest="unweighted_gain",
                   help="use the unweighted gain variant (child entropies not size-weighted)")
    p.add_argument("--no-boost", action="store_true", help="disable boosting (alpha = 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hirf",
        description="Incremental NCM random-forest experiments: retrain weak trees, "
        "refresh strong ones, compare against offline retraining.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an arrival schedule")
    _add_common_args(run_p)
    run_p.add_argument("--schedule", type=Path, default=None,
                       help='schedule JSON {"initial": [...], "batches": [[...], ...]}')
    run_p.add_argument("--initial-count", type=int, default=5,
                       help="initial classes when no schedule file is given")
    run_p.add_argument("--step-size", type=int, default=1,
                       help="batch size when no schedule file is given")

    sweep_p = sub.add_parser("sweep", help="one absorb per initial-class count")
    _add_common_args(sweep_p)
    sweep_p.add_argument("--initial-counts", type=_parse_counts, required=True,
                         metavar="N1,N2,...", help="initial-class counts to sweep")
    return parser


def _config_from_args(args: argparse.Namespace) -> ForestConfig:
    return ForestConfig(
        s=args.trees,
        max_depth=args.max_depth,
        trials=args.trials,
        class_cap=args.class_cap,
        min_samples=args.min_samples,
        vote_mode=HARD if args.hard_vote else SOFT,
        unweighted_gain=args.unweighted_gain,
        alpha=0.0 if args.no_boost else args.alpha,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.data is None and args.synthetic is None:
        args.synthetic = SyntheticSpec(n_classes=10, per_class=300, n_features=16)
    spec = ExperimentSpec(
        out_dir=args.out,
        seed=args.seed,
        config=_config_from_args(args),
        data_path=args.data,
        synthetic=args.synthetic,
        schedule_path=getattr(args, "schedule", None),
        initial_count=getattr(args, "initial_count", 5),
        step_size=getattr(args, "step_size", 1),
        test_fraction=args.test_fraction,
    )
    if args.command == "run":
        return cmd_run(spec)
    return cmd_sweep(spec, args.initial_counts)


if __name__ == "__main__":
    sys.exit(main())
