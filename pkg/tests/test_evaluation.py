"""Evaluation metrics: assignment accuracy, kNN, probe, silhouette, k-means."""

import itertools

import numpy as np
import pytest

from bicon.errors import DimensionError, DomainError
from bicon.evaluation import (
    confusion_matrix,
    holdout_split,
    hungarian_accuracy,
    kmeans_labels,
    knn_accuracy,
    linear_probe,
    max_assignment,
    silhouette,
)


def brute_force_assignment(weights):
    n = weights.shape[0]
    best = -np.inf
    for perm in itertools.permutations(range(n)):
        total = sum(weights[i, perm[i]] for i in range(n))
        best = max(best, total)
    return best


class TestAssignment:
    def test_identity_prediction(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        assert hungarian_accuracy(y, y) == pytest.approx(1.0)

    def test_permuted_labels_still_perfect(self):
        # cluster ids are nameless; any relabeling scores 1
        truth = np.array([0, 0, 1, 1, 2, 2])
        pred = np.array([2, 2, 0, 0, 1, 1])
        assert hungarian_accuracy(pred, truth) == pytest.approx(1.0)

    def test_half_right(self):
        truth = np.array([0, 0, 1, 1])
        pred = np.array([0, 1, 0, 1])
        assert hungarian_accuracy(pred, truth) == pytest.approx(0.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(101)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            w = rng.normal(size=(n, n))
            got = max_assignment(w).matched
            want = brute_force_assignment(w)
            assert got == pytest.approx(want, abs=1e-9)

    def test_assignment_is_a_permutation(self):
        rng = np.random.default_rng(103)
        w = rng.normal(size=(6, 6))
        a = max_assignment(w)
        assert sorted(a.col_for_row.tolist()) == list(range(6))

    def test_rectangular_prediction_space(self):
        # more predicted clusters than true classes
        truth = np.array([0, 0, 1, 1])
        pred = np.array([0, 1, 2, 3])
        assert hungarian_accuracy(pred, truth) == pytest.approx(0.5)

    def test_confusion_matrix_counts(self):
        truth = np.array([0, 0, 1, 1, 1])
        pred = np.array([1, 1, 0, 0, 1])
        m, pred_ids, true_ids = confusion_matrix(pred, truth)
        assert m.sum() == 5
        assert m[list(pred_ids).index(1), list(true_ids).index(0)] == 2

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            hungarian_accuracy(np.array([0, 1]), np.array([0, 1, 2]))


class TestKnn:
    def test_single_vote(self):
        train_z = np.array([[0.0], [10.0]])
        train_y = np.array([0, 1])
        test_z = np.array([[1.0], [9.0]])
        test_y = np.array([0, 1])
        assert knn_accuracy(train_z, train_y, test_z, test_y, k=1) == pytest.approx(1.0)

    def test_matches_rescan(self):
        rng = np.random.default_rng(107)
        train_z = rng.normal(size=(30, 3))
        train_y = rng.integers(0, 3, size=30)
        test_z = rng.normal(size=(12, 3))
        test_y = rng.integers(0, 3, size=12)
        k = 5
        got = knn_accuracy(train_z, train_y, test_z, test_y, k=k)
        hits = 0
        for i in range(12):
            d = ((train_z - test_z[i]) ** 2).sum(axis=1)
            order = sorted(range(30), key=lambda j: (d[j], j))[:k]
            votes = np.bincount(train_y[order], minlength=3)
            winner = int(np.argmax(votes))  # argmax takes the smallest label on ties
            hits += winner == test_y[i]
        assert got == pytest.approx(hits / 12.0)

    def test_k_capped_by_train_size(self):
        with pytest.raises(DomainError):
            knn_accuracy(np.zeros((3, 1)), np.zeros(3, dtype=int),
                         np.zeros((1, 1)), np.zeros(1, dtype=int), k=4)


class TestLinearProbe:
    def test_separable_data(self):
        rng = np.random.default_rng(109)
        n = 100
        y = np.repeat([0, 1], n // 2)
        z = rng.normal(size=(n, 2)) + y[:, None] * 8.0
        acc = linear_probe(z[: n - 20], y[: n - 20], z[n - 20:], y[n - 20:])
        assert acc >= 0.99

    def test_pure_noise_near_chance(self):
        rng = np.random.default_rng(113)
        z_train = rng.normal(size=(200, 4))
        y_train = rng.integers(0, 2, size=200)
        z_test = rng.normal(size=(200, 4))
        y_test = rng.integers(0, 2, size=200)
        acc = linear_probe(z_train, y_train, z_test, y_test)
        # 3 sigma binomial band around 0.5
        assert abs(acc - 0.5) < 3.0 * 0.5 / np.sqrt(200)


class TestSilhouette:
    def test_hand_value_two_pairs(self):
        # two tight pairs far apart: a = 1, b = 10 for every point
        z = np.array([[0.0], [1.0], [10.0], [11.0]])
        labels = np.array([0, 0, 1, 1])
        # outer points: a=1, b=(10+11)/2; inner points: a=1, b=(9+10)/2
        want = 0.5 * ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5)
        assert silhouette(z, labels) == pytest.approx(want, abs=1e-9)

    def test_far_separated_blobs_close_to_one(self):
        rng = np.random.default_rng(127)
        a = rng.normal(size=(40, 2)) * 0.1
        b = rng.normal(size=(40, 2)) * 0.1 + 100.0
        z = np.vstack([a, b])
        labels = np.repeat([0, 1], 40)
        assert silhouette(z, labels) > 0.9

    def test_translation_invariant(self):
        rng = np.random.default_rng(131)
        z = rng.normal(size=(30, 3))
        labels = rng.integers(0, 3, size=30)
        s1 = silhouette(z, labels)
        s2 = silhouette(z + 17.0, labels)
        assert s1 == pytest.approx(s2, abs=1e-9)

    def test_scale_invariant(self):
        rng = np.random.default_rng(137)
        z = rng.normal(size=(30, 3))
        labels = rng.integers(0, 3, size=30)
        assert silhouette(z, labels) == pytest.approx(silhouette(z * 3.0, labels), abs=1e-9)

    def test_single_cluster_rejected(self):
        with pytest.raises(DomainError):
            silhouette(np.zeros((4, 2)), np.zeros(4, dtype=int))


class TestHoldout:
    def test_sizes_and_disjointness(self):
        train, test = holdout_split(100, 0.25, seed=0)
        assert len(test) == 25
        assert len(train) == 75
        assert set(train).isdisjoint(test)
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(100))

    def test_deterministic_per_seed(self):
        a = holdout_split(50, 0.25, seed=3)
        b = holdout_split(50, 0.25, seed=3)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        c = holdout_split(50, 0.25, seed=4)
        assert not np.array_equal(a[1], c[1])


class TestKmeans:
    def test_recovers_separated_blobs(self):
        rng = np.random.default_rng(139)
        centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
        x = np.vstack([rng.normal(size=(30, 2)) + c for c in centers])
        truth = np.repeat([0, 1, 2], 30)
        pred = kmeans_labels(x, 3, seed=0)
        assert hungarian_accuracy(pred, truth) == pytest.approx(1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(149)
        x = rng.normal(size=(60, 4))
        np.testing.assert_array_equal(kmeans_labels(x, 4, seed=7), kmeans_labels(x, 4, seed=7))
