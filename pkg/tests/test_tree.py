"""Tests for NCM tree growth, routing, gain, prediction, and leaf refresh."""

import itertools
import math
from collections import Counter

import numpy as np
import pytest

from hirf.data import Dataset
from hirf.tree import (
    LEFT,
    RIGHT,
    CentroidSet,
    GrowthConfig,
    InternalNode,
    LeafNode,
    choose_best_split,
    class_centroids,
    collect_leaves,
    grow,
    information_gain,
    leaf_assignments,
    predict_proba,
    refresh_leaves,
    route,
    structure_hash,
    tree_from_dict,
    tree_to_dict,
)


def make_dataset(X, y):
    X = np.asarray(X, dtype=float)
    return Dataset(np.arange(len(X)), X, np.asarray(y, dtype=int))


def oracle_entropy(labels) -> float:
    """Independent entropy: Counter + math.log."""
    counts = Counter(labels)
    n = sum(counts.values())
    if n == 0:
        return 0.0
    return -sum((c / n) * math.log(c / n) for c in counts.values())


def oracle_best_gain(X, y, cset: CentroidSet, weighted=True) -> float:
    """Brute force over every admissible left/right assignment of the classes."""
    X = np.asarray(X, dtype=float)
    nearest = []
    for row in X:
        d = [float(((row - c) ** 2).sum()) for c in cset.centroids]
        nearest.append(int(np.argmin(d)))
    n_classes = cset.labels.size
    parent_e = oracle_entropy(list(y))
    best = -math.inf
    for bits in itertools.product([False, True], repeat=n_classes):
        if not any(bits) or all(bits):
            continue
        left_y = [lab for lab, j in zip(y, nearest) if bits[j]]
        right_y = [lab for lab, j in zip(y, nearest) if not bits[j]]
        if weighted:
            gain = (parent_e
                    - (len(left_y) / len(y)) * oracle_entropy(left_y)
                    - (len(right_y) / len(y)) * oracle_entropy(right_y))
        else:
            gain = parent_e - oracle_entropy(left_y) - oracle_entropy(right_y)
        best = max(best, gain)
    return best


class TestClassCentroids:
    def test_two_point_mean(self):
        data = make_dataset([[0.0, 0.0], [2.0, 2.0]], [1, 1])
        cset = class_centroids(data, [1])
        assert cset.centroids[0] == pytest.approx([1.0, 1.0])

    def test_singleton_class(self):
        data = make_dataset([[3.0, -1.0]], [4])
        cset = class_centroids(data, [4])
        assert cset.centroids[0] == pytest.approx([3.0, -1.0])

    def test_three_sample_oracle(self):
        data = make_dataset([[1.0, 0.0], [2.0, 0.0], [6.0, 0.0]], [2, 2, 2])
        cset = class_centroids(data, [2])
        assert cset.centroids[0] == pytest.approx([3.0, 0.0])

    def test_missing_class_errors(self):
        data = make_dataset([[0.0]], [1])
        with pytest.raises(ValueError):
            class_centroids(data, [1, 2])


def _two_class_node(assign_a_left=True):
    cset = CentroidSet(labels=np.array([1, 2]),
                       centroids=np.array([[1.0, 0.0], [3.0, 0.0]]))
    goes_left = np.array([assign_a_left, not assign_a_left])
    return InternalNode(centroids=cset, goes_left=goes_left,
                        left=LeafNode(np.array([1]), np.array([1.0]), 1),
                        right=LeafNode(np.array([2]), np.array([1.0]), 1))


class TestRoute:
    def test_nearest_side(self):
        node = _two_class_node()
        assert route(np.array([0.0, 0.0]), node) == LEFT
        assert route(np.array([4.0, 0.0]), node) == RIGHT

    def test_tie_goes_to_smallest_label(self):
        node = _two_class_node(assign_a_left=False)
        # (2, 0) is exactly between both centroids; class 1 wins the tie
        assert route(np.array([2.0, 0.0]), node) == RIGHT

    def test_squared_distance_comparison(self):
        node = _two_class_node()
        # (2.6, 0): 2.56 vs 0.16 -> class 2's side
        assert route(np.array([2.6, 0.0]), node) == RIGHT

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            route(np.array([1.0]), _two_class_node())

    def test_scale_consistency(self):
        # argmin over squared distances equals argmin over distances
        rng = np.random.default_rng(44)
        for _ in range(50):
            x = rng.normal(size=3)
            centroids = rng.normal(size=(4, 3))
            sq = ((x - centroids) ** 2).sum(axis=1)
            assert np.argmin(sq) == np.argmin(np.sqrt(sq))


class TestInformationGain:
    def test_pure_parent_gain_zero(self):
        parent = make_dataset([[0.0], [1.0], [2.0]], [1, 1, 1])
        left = parent.subset(np.array([True, False, False]))
        right = parent.subset(np.array([False, True, True]))
        assert information_gain(parent, left, right) == pytest.approx(0.0)

    def test_clean_split_gain_is_ln2(self):
        parent = make_dataset([[0.0], [0.1], [5.0], [5.1]], [1, 1, 2, 2])
        left = parent.subset(parent.y == 1)
        right = parent.subset(parent.y == 2)
        assert information_gain(parent, left, right) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_empty_side_no_op(self):
        parent = make_dataset([[0.0], [1.0]], [1, 2])
        left = parent
        right = parent.subset(np.zeros(2, dtype=bool))
        assert information_gain(parent, left, right) == pytest.approx(0.0)

    def test_unweighted_matches_oracle(self):
        parent = make_dataset([[0.0]] * 6, [1, 1, 1, 2, 2, 3])
        left = parent.subset(np.array([1, 1, 0, 1, 0, 0], dtype=bool))
        right = parent.subset(np.array([0, 0, 1, 0, 1, 1], dtype=bool))
        expected = (oracle_entropy([1, 1, 1, 2, 2, 3])
                    - oracle_entropy([1, 1, 2]) - oracle_entropy([1, 2, 3]))
        got = information_gain(parent, left, right, weighted=False)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_partition_size_checked(self):
        parent = make_dataset([[0.0], [1.0]], [1, 2])
        with pytest.raises(ValueError):
            information_gain(parent, parent, parent)


class TestChooseBestSplit:
    def test_two_classes_single_trial(self):
        data = make_dataset([[0.0], [0.2], [5.0], [5.2]], [1, 1, 2, 2])
        cset = class_centroids(data, [1, 2])
        cand = choose_best_split(data, cset, trials=1, rng=np.random.default_rng(0))
        sides = cand.assignment()
        assert {sides[1], sides[2]} == {LEFT, RIGHT}
        assert cand.gain == pytest.approx(math.log(2.0), abs=1e-12)

    def test_matches_brute_force_on_four_classes(self):
        rng = np.random.default_rng(21)
        centers = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0]])
        X = np.vstack([c + 0.3 * rng.normal(size=(10, 2)) for c in centers])
        y = np.repeat([1, 2, 3, 4], 10)
        data = make_dataset(X, y)
        cset = class_centroids(data, [1, 2, 3, 4])
        cand = choose_best_split(data, cset, trials=14, rng=np.random.default_rng(3))
        assert cand.gain == pytest.approx(oracle_best_gain(X, y, cset), abs=1e-12)

    def test_deterministic_under_seed(self):
        rng_data = np.random.default_rng(4)
        data = make_dataset(rng_data.normal(size=(30, 3)), rng_data.integers(1, 5, size=30))
        cset = class_centroids(data, list(np.unique(data.y)))
        a = choose_best_split(data, cset, trials=5, rng=np.random.default_rng(17))
        b = choose_best_split(data, cset, trials=5, rng=np.random.default_rng(17))
        assert a.gain == b.gain
        assert np.array_equal(a.goes_left, b.goes_left)

    def test_single_class_errors(self):
        data = make_dataset([[0.0], [1.0]], [1, 1])
        cset = CentroidSet(labels=np.array([1, 2]),
                           centroids=np.array([[0.0], [9.0]]))
        with pytest.raises(ValueError):
            choose_best_split(data, cset, trials=1, rng=np.random.default_rng(0))


def default_config(**kw):
    return GrowthConfig(**kw)


class TestGrow:
    def test_single_class_single_leaf(self):
        data = make_dataset([[0.0], [1.0], [2.0]], [3, 3, 3])
        tree = grow(data, default_config(), np.random.default_rng(0))
        assert isinstance(tree.root, LeafNode)
        assert predict_proba(tree, np.array([0.5])) == {3: 1.0}

    def test_two_separated_clusters_pure_leaves(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(20, 2)) * 0.2
        b = rng.normal(size=(20, 2)) * 0.2 + 10.0
        data = make_dataset(np.vstack([a, b]), [1] * 20 + [2] * 20)
        tree = grow(data, default_config(max_depth=1), np.random.default_rng(1))
        assert isinstance(tree.root, InternalNode)
        leaves = collect_leaves(tree)
        assert len(leaves) == 2
        for leaf in leaves:
            assert leaf.labels.size == 1 and leaf.probs[0] == 1.0
        # oracle: partition induced by nearest class centroid is the class split
        cset = class_centroids(data, [1, 2])
        d_own = ((data.X - cset.centroids[data.y - 1]) ** 2).sum(axis=1)
        d_other = ((data.X - cset.centroids[2 - data.y]) ** 2).sum(axis=1)
        assert (d_own < d_other).all()

    def test_max_depth_zero_prior_leaf(self):
        data = make_dataset([[0.0], [1.0], [2.0], [3.0]], [1, 1, 1, 2])
        tree = grow(data, default_config(max_depth=0), np.random.default_rng(0))
        assert isinstance(tree.root, LeafNode)
        assert predict_proba(tree, np.array([0.0])) == pytest.approx({1: 0.75, 2: 0.25})

    def test_depth_bound_property(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            n = int(rng.integers(10, 80))
            data = make_dataset(rng.normal(size=(n, 2)), rng.integers(1, 6, size=n))
            max_depth = int(rng.integers(1, 5))
            tree = grow(data, default_config(max_depth=max_depth),
                        np.random.default_rng(trial))

            def max_leaf_depth(node, depth=0):
                if isinstance(node, LeafNode):
                    return depth
                return max(max_leaf_depth(node.left, depth + 1),
                           max_leaf_depth(node.right, depth + 1))

            assert max_leaf_depth(tree.root) <= max_depth

    def test_leaf_probabilities_normalized(self):
        rng = np.random.default_rng(13)
        data = make_dataset(rng.normal(size=(60, 3)), rng.integers(1, 5, size=60))
        tree = grow(data, default_config(), np.random.default_rng(2))
        for leaf in collect_leaves(tree):
            if leaf.support > 0:
                assert abs(leaf.probs.sum() - 1.0) < 1e-9

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(14)
        data = make_dataset(rng.normal(size=(50, 4)), rng.integers(1, 7, size=50))
        t1 = grow(data, default_config(), np.random.default_rng(99))
        t2 = grow(data, default_config(), np.random.default_rng(99))
        assert tree_to_dict(t1) == tree_to_dict(t2)

    def test_empty_data_errors(self):
        empty = Dataset(np.empty(0, dtype=int), np.empty((0, 2)), np.empty(0, dtype=int))
        with pytest.raises(ValueError):
            grow(empty, default_config(), np.random.default_rng(0))


class TestPredictProba:
    def test_depth_one_routing_by_hand(self):
        rng = np.random.default_rng(15)
        a = rng.normal(size=(10, 2)) * 0.1
        b = rng.normal(size=(10, 2)) * 0.1 + 8.0
        data = make_dataset(np.vstack([a, b]), [1] * 10 + [2] * 10)
        tree = grow(data, default_config(max_depth=1), np.random.default_rng(1))
        probs = predict_proba(tree, np.array([0.0, 0.0]))
        assert probs[1] == pytest.approx(1.0)
        probs = predict_proba(tree, np.array([8.0, 8.0]))
        assert probs[2] == pytest.approx(1.0)

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(16)
        data = make_dataset(rng.normal(size=(40, 3)), rng.integers(1, 4, size=40))
        tree = grow(data, default_config(), np.random.default_rng(7))
        for _ in range(10):
            probs = predict_proba(tree, rng.normal(size=3))
            assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)

    def test_dimension_mismatch(self):
        data = make_dataset([[0.0, 1.0]], [1])
        tree = grow(data, default_config(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            predict_proba(tree, np.array([1.0]))


class TestRefreshLeaves:
    def _grown(self, seed=20, n=60):
        rng = np.random.default_rng(seed)
        centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
        X = np.vstack([c + 0.4 * rng.normal(size=(n // 3, 2)) for c in centers])
        y = np.repeat([1, 2, 3], n // 3)
        data = make_dataset(X, y)
        return data, grow(data, default_config(), np.random.default_rng(seed))

    def test_idempotent_on_training_data(self):
        data, tree = self._grown()
        refreshed = refresh_leaves(tree, data)
        assert tree_to_dict(refreshed) == tree_to_dict(tree)

    def test_leaf_counts(self):
        # single-leaf tree refreshed with {A, A, B} must show 2/3 vs 1/3
        base = make_dataset([[0.0]], [1])
        tree = grow(base, default_config(max_depth=0), np.random.default_rng(0))
        new = make_dataset([[0.0], [0.1], [0.2]], [1, 1, 2])
        refreshed = refresh_leaves(tree, new)
        probs = predict_proba(refreshed, np.array([0.0]))
        assert probs == pytest.approx({1: 2.0 / 3.0, 2: 1.0 / 3.0})

    def test_structure_hash_preserved(self):
        data, tree = self._grown(seed=21)
        rng = np.random.default_rng(5)
        new = make_dataset(rng.normal(size=(30, 2)) + 3.0, rng.integers(1, 6, size=30))
        refreshed = refresh_leaves(tree, new)
        assert structure_hash(refreshed) == structure_hash(tree)

    def test_empty_leaf_keeps_distribution(self):
        rng = np.random.default_rng(22)
        a = rng.normal(size=(15, 2)) * 0.1
        b = rng.normal(size=(15, 2)) * 0.1 + 9.0
        data = make_dataset(np.vstack([a, b]), [1] * 15 + [2] * 15)
        tree = grow(data, default_config(max_depth=1), np.random.default_rng(1))
        # refresh with data that lands only on class 1's side
        only_a = make_dataset(rng.normal(size=(10, 2)) * 0.1, [5] * 10)
        refreshed = refresh_leaves(tree, only_a)
        probs_far = predict_proba(refreshed, np.array([9.0, 9.0]))
        assert probs_far == pytest.approx({2: 1.0})
        probs_near = predict_proba(refreshed, np.array([0.0, 0.0]))
        assert probs_near == pytest.approx({5: 1.0})

    def test_known_classes_extended(self):
        data, tree = self._grown(seed=23)
        new = make_dataset([[0.0, 0.0], [6.0, 0.0]], [7, 8])
        refreshed = refresh_leaves(tree, new)
        assert set(refreshed.known_classes) == {1, 2, 3, 7, 8}


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(30)
        data = make_dataset(rng.normal(size=(50, 3)), rng.integers(1, 5, size=50))
        tree = grow(data, default_config(), np.random.default_rng(1))
        obj = tree_to_dict(tree)
        again = tree_to_dict(tree_from_dict(obj))
        assert again == obj

    def test_structure_hash_distinguishes_trees(self):
        rng = np.random.default_rng(31)
        data = make_dataset(rng.normal(size=(50, 3)), rng.integers(1, 5, size=50))
        t1 = grow(data, default_config(), np.random.default_rng(1))
        t2 = grow(data, default_config(), np.random.default_rng(2))
        assert structure_hash(t1) != structure_hash(t2)

    def test_leaf_assignment_matches_single_prediction(self):
        rng = np.random.default_rng(32)
        data = make_dataset(rng.normal(size=(40, 2)), rng.integers(1, 4, size=40))
        tree = grow(data, default_config(), np.random.default_rng(3))
        leaves = collect_leaves(tree)
        assign = leaf_assignments(tree, data.X)
        for i in range(len(data)):
            leaf = leaves[assign[i]]
            expected = {int(c): float(p) for c, p in zip(leaf.labels, leaf.probs)}
            assert predict_proba(tree, data.X[i]) == expected
