"""Heterogeneous incremental nearest-class-mean random forests.

A bagged ensemble of NCM decision trees that absorbs batches of new classes
by selectively retraining trees with bad out-of-bag errors and cheaply
refreshing leaf probabilities of the rest.
"""

from .data import (
    ArrivalSchedule,
    BootstrapSet,
    Dataset,
    LabeledSample,
    NormalizationStats,
    bootstrap,
    bootstrap_replicate,
    concat_datasets,
    fit_normalizer,
    left_out,
    load_csv_dataset,
    load_schedule,
    normalize,
    normalize_dataset,
    save_csv_dataset,
    save_schedule,
    split_by_schedule,
)
from .forest import (
    Forest,
    ForestConfig,
    accuracy,
    forest_from_dict,
    forest_to_dict,
    load_forest,
    oob_error,
    predict,
    predict_batch,
    save_forest,
    train_offline,
)
from .incremental import (
    RETRAIN,
    UPDATE,
    OobState,
    RoundReport,
    absorb_batch,
    classify_trees,
    oob_boosting,
    oob_estimation,
    run_schedule,
    sweep_initial_counts,
)
from .synth import SyntheticSpec, generate_synthetic
from .tree import (
    CentroidSet,
    GrowthConfig,
    NcmTree,
    SplitCandidate,
    choose_best_split,
    class_centroids,
    grow,
    information_gain,
    predict_proba,
    refresh_leaves,
    route,
    structure_hash,
    tree_from_dict,
    tree_to_dict,
)

__version__ = "0.1.0"
