"""Softmax similarity kernels, supervisory constructions and their gradients."""

import math

import numpy as np
import pytest

from bicon import (
    KernelSpec,
    cluster_transition,
    kernel_rows,
    kernel_rows_grad,
    similarity_matrix,
    supervisory_knn,
    supervisory_labels,
    supervisory_sne,
)
from bicon.errors import DegenerateRowError, DimensionError, DomainError
from bicon.kernels import (
    cluster_transition_grad,
    learned_rows,
    normalize_rows,
    squared_distances,
    validate_distribution,
)


def row_entropy(P):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = -P * np.log(P)
    terms[P <= 0.0] = 0.0
    return terms.sum(axis=1)


class TestSimilarityMatrix:
    def test_distance_symmetric_placement(self):
        z = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        s = similarity_matrix(z, KernelSpec("distance", 1.0))
        np.testing.assert_allclose([s[0, 1], s[0, 2]], [-1.0, -1.0], atol=1e-12)

    def test_angular_identical_unit_vectors(self):
        v = np.array([3.0, 4.0]) / 5.0
        s = similarity_matrix(np.stack([v, v]), KernelSpec("angular", 1.0))
        assert s[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_distance_matches_double_loop(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(5, 3))
        spec = KernelSpec("distance", 1.0)
        s = similarity_matrix(z, spec)
        for i in range(5):
            for j in range(5):
                if i == j:
                    continue
                want = -np.sum((z[i] - z[j]) ** 2)
                assert s[i, j] == pytest.approx(want, rel=1e-12)

    def test_scale_constant(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(4, 2))
        s1 = similarity_matrix(z, KernelSpec("distance", 1.0))
        s3 = similarity_matrix(z, KernelSpec("distance", 3.0))
        np.testing.assert_allclose(s3, 3.0 * s1, atol=1e-12)

    def test_non_finite_rejected(self):
        z = np.array([[0.0, np.inf], [1.0, 0.0]])
        with pytest.raises(DomainError):
            similarity_matrix(z, KernelSpec("distance", 1.0))

    def test_angular_requires_unit_rows(self):
        z = np.array([[2.0, 0.0], [0.0, 1.0]])
        with pytest.raises(DomainError):
            similarity_matrix(z, KernelSpec("angular", 1.0))

    def test_bad_scale(self):
        with pytest.raises(DomainError):
            KernelSpec("distance", 0.0)
        with pytest.raises(DomainError):
            KernelSpec("euclid", 1.0)


class TestKernelRows:
    def test_equal_scores(self):
        scores = np.array([[0.0, -1.0, -1.0], [-1.0, 0.0, -1.0], [-1.0, -1.0, 0.0]])
        q = kernel_rows(scores)
        np.testing.assert_allclose(q[0], [0.0, 0.5, 0.5], atol=1e-12)

    def test_analytic_softmax(self):
        scores = np.array([[0.0, math.log(3.0), 0.0]] * 3)
        q = kernel_rows(scores)
        np.testing.assert_allclose(q[0, 1:], [0.75, 0.25], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(9)
        q = kernel_rows(rng.normal(size=(6, 6)))
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diagonal(q) == 0.0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(10)
        scores = rng.normal(size=(5, 5))
        shifted = scores + rng.normal(size=(5, 1))
        np.testing.assert_allclose(kernel_rows(scores), kernel_rows(shifted), atol=1e-12)

    def test_overflow_safety(self):
        scores = np.full((3, 3), 0.0)
        scores[0, 1] = 800.0
        scores[0, 2] = 100.0
        q = kernel_rows(scores)
        assert np.all(np.isfinite(q))
        assert q[0, 1] == pytest.approx(1.0)

    def test_too_small(self):
        with pytest.raises(DimensionError):
            kernel_rows(np.zeros((1, 1)))

    def test_non_finite_scores(self):
        scores = np.zeros((3, 3))
        scores[1, 2] = np.nan
        with pytest.raises(DomainError):
            kernel_rows(scores)


class TestKernelGradients:
    def test_zero_cograd_gives_zero(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(4, 3))
        g = kernel_rows_grad(z, KernelSpec("distance", 1.0), np.zeros((4, 4)))
        np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("family", ["distance", "angular"])
    def test_matches_finite_differences(self, family):
        # scalar probe loss sum(A * q); perturbations hit the raw embedding,
        # before any normalization
        rng = np.random.default_rng(13)
        spec = KernelSpec(family, 1.25)
        for _ in range(20):
            z = rng.normal(size=(5, 3))
            A = rng.normal(size=(5, 5))
            np.fill_diagonal(A, 0.0)
            analytic = kernel_rows_grad(z, spec, A)
            h = 1e-6
            numeric = np.zeros_like(z)
            for idx in np.ndindex(z.shape):
                stepped = z.copy()
                stepped[idx] += h
                hi = float(np.sum(A * learned_rows(stepped, spec)))
                stepped[idx] -= 2.0 * h
                lo = float(np.sum(A * learned_rows(stepped, spec)))
                numeric[idx] = (hi - lo) / (2.0 * h)
            scale = max(np.max(np.abs(numeric)), 1e-12)
            assert np.max(np.abs(analytic - numeric)) / scale < 1e-5

    def test_diagonal_cograd_rejected(self):
        z = np.zeros((3, 2))
        g = np.eye(3)
        with pytest.raises(DomainError):
            kernel_rows_grad(z, KernelSpec("distance", 1.0), g)

    def test_shape_mismatch(self):
        z = np.zeros((3, 2))
        with pytest.raises(DimensionError):
            kernel_rows_grad(z, KernelSpec("distance", 1.0), np.zeros((4, 4)))


class TestSupervisorySne:
    def test_equidistant_rows_uniform(self):
        # vertices of a regular simplex are mutually equidistant
        z = np.eye(4)
        P = supervisory_sne(z, 2.5)
        np.testing.assert_allclose(P[P > 0], 1.0 / 3.0, atol=1e-9)

    def test_collinear_entropy_calibration(self):
        x = np.linspace(0.0, 9.0, 10).reshape(-1, 1)
        P = supervisory_sne(x, 5.0)
        np.testing.assert_allclose(row_entropy(P), math.log(5.0), atol=1e-4)

    def test_entropy_calibration_random(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(40, 6))
        for perplexity in (5.0, 15.0, 30.0):
            P = supervisory_sne(x, perplexity)
            np.testing.assert_allclose(np.exp(row_entropy(P)), perplexity, atol=1e-3)

    def test_distribution_invariants(self):
        rng = np.random.default_rng(22)
        P = supervisory_sne(rng.normal(size=(12, 3)), 4.0)
        validate_distribution(P)

    def test_perplexity_out_of_range(self):
        x = np.zeros((5, 2))
        with pytest.raises(DomainError):
            supervisory_sne(x, 1.0)
        with pytest.raises(DomainError):
            supervisory_sne(x, 5.0)


class TestSupervisoryLabels:
    def test_one_positive_partner(self):
        P = supervisory_labels([0, 0, 1, 1])
        np.testing.assert_allclose(P[0], [0.0, 1.0, 0.0, 0.0], atol=0)
        np.testing.assert_allclose(P[2], [0.0, 0.0, 0.0, 1.0], atol=0)

    def test_all_same_label(self):
        P = supervisory_labels([7, 7, 7, 7])
        np.testing.assert_allclose(P + np.eye(4) / 3.0, 1.0 / 3.0, atol=1e-12)

    def test_support_matches_classes(self):
        rng = np.random.default_rng(31)
        labels = np.repeat([0, 1, 2], 4)
        rng.shuffle(labels)
        P = supervisory_labels(labels)
        validate_distribution(P)
        same = labels[:, None] == labels[None, :]
        np.fill_diagonal(same, False)
        assert np.array_equal(P > 0, same)

    def test_singleton_class_named(self):
        with pytest.raises(DomainError, match="2"):
            supervisory_labels([0, 0, 1, 2, 2])


class TestSupervisoryKnn:
    def test_full_neighborhood_uniform(self):
        rng = np.random.default_rng(41)
        x = rng.normal(size=(6, 2))
        P = supervisory_knn(x, 5)
        np.testing.assert_allclose(P + np.eye(6) / 5.0, 0.2, atol=1e-12)

    def test_identical_clusters(self):
        base = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        x = np.repeat(base, 4, axis=0)
        P = supervisory_knn(x, 3)
        group = np.repeat(np.arange(3), 4)
        same = group[:, None] == group[None, :]
        np.fill_diagonal(same, False)
        assert np.array_equal(P > 0, same)
        np.testing.assert_allclose(P[P > 0], 1.0 / 3.0, atol=0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(47)
        x = rng.normal(size=(20, 5))
        k = 4
        P = supervisory_knn(x, k)
        d = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        for i in range(20):
            others = [j for j in range(20) if j != i]
            others.sort(key=lambda j: (d[i, j], j))
            want = set(others[:k])
            got = set(np.flatnonzero(P[i] > 0).tolist())
            assert got == want

    def test_tie_breaks_toward_smaller_index(self):
        x = np.array([[0.0], [1.0], [-1.0], [5.0]])
        P = supervisory_knn(x, 1)
        assert np.flatnonzero(P[0])[0] == 1

    def test_k_out_of_range(self):
        x = np.zeros((4, 2))
        with pytest.raises(DomainError):
            supervisory_knn(x, 0)
        with pytest.raises(DomainError):
            supervisory_knn(x, 4)


class TestClusterTransition:
    def test_identical_rows_uniform(self):
        phi = np.tile([0.2, 0.5, 0.3], (5, 1))
        q = cluster_transition(phi)
        np.testing.assert_allclose(q + np.eye(5) * 0.25, 0.25, atol=1e-12)

    def test_one_hot_blocks(self):
        phi = np.zeros((6, 2))
        phi[:3, 0] = 1.0
        phi[3:, 1] = 1.0
        q = cluster_transition(phi)
        want = np.zeros((6, 6))
        want[:3, :3] = 0.5
        want[3:, 3:] = 0.5
        np.fill_diagonal(want, 0.0)
        np.testing.assert_allclose(q, want, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(53)
        phi = rng.dirichlet(np.ones(4), size=6)
        q = cluster_transition(phi)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
        validate_distribution(q)

    def test_degenerate_row(self):
        phi = np.zeros((3, 3))
        phi[0, 0] = 1.0
        phi[1, 1] = 1.0
        phi[2, 2] = 1.0
        with pytest.raises(DegenerateRowError) as err:
            cluster_transition(phi)
        assert err.value.row == 0

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(59)
        phi = rng.dirichlet(np.ones(4), size=6)
        A = rng.normal(size=(6, 6))
        np.fill_diagonal(A, 0.0)
        analytic = cluster_transition_grad(phi, A)
        h = 1e-7
        numeric = np.zeros_like(phi)
        for idx in np.ndindex(phi.shape):
            stepped = phi.copy()
            stepped[idx] += h
            hi = float(np.sum(A * _transition_no_validate(stepped)))
            stepped[idx] -= 2.0 * h
            lo = float(np.sum(A * _transition_no_validate(stepped)))
            numeric[idx] = (hi - lo) / (2.0 * h)
        scale = max(np.max(np.abs(numeric)), 1e-12)
        assert np.max(np.abs(analytic - numeric)) / scale < 1e-5


def _transition_no_validate(phi):
    # FD probes step off the simplex; recompute the map without validation
    G = phi @ phi.T
    np.fill_diagonal(G, 0.0)
    return G / G.sum(axis=1, keepdims=True)


class TestGeometricInvariances:
    def test_distance_rows_translation_invariant(self):
        rng = np.random.default_rng(61)
        z = rng.normal(size=(7, 3))
        spec = KernelSpec("distance", 1.5)
        shifted = learned_rows(z + np.array([5.0, -3.0, 2.0]), spec)
        np.testing.assert_allclose(learned_rows(z, spec), shifted, atol=1e-9)

    def test_angular_rows_rotation_invariant(self):
        rng = np.random.default_rng(67)
        z = rng.normal(size=(7, 3))
        R, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        spec = KernelSpec("angular", 2.0)
        np.testing.assert_allclose(
            learned_rows(z, spec), learned_rows(z @ R.T, spec), atol=1e-9
        )

    def test_distribution_invariants_many_instances(self):
        rng = np.random.default_rng(71)
        for _ in range(50):
            n = int(rng.integers(3, 12))
            x = rng.normal(size=(n, 3))
            validate_distribution(learned_rows(x, KernelSpec("distance", 1.0)))
            validate_distribution(learned_rows(x, KernelSpec("angular", 1.0)))
            validate_distribution(supervisory_knn(x, min(3, n - 1)))

    def test_normalize_rows(self):
        rng = np.random.default_rng(73)
        z = rng.normal(size=(5, 4))
        u = normalize_rows(z)
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
        with pytest.raises(DomainError):
            normalize_rows(np.zeros((2, 2)))

    def test_squared_distances_blocked_matches_direct(self):
        rng = np.random.default_rng(79)
        x = rng.normal(size=(150, 4))
        d2 = squared_distances(x, block=64)
        direct = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_allclose(d2, direct, atol=1e-9)
