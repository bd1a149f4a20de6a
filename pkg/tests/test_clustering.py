import itertools
import warnings

import numpy as np
import pytest

from kmfm.clustering import (
    EmptyClusterResolved,
    KMeansConfig,
    inertia_of,
    kmeans,
    lloyd_step,
)
from kmfm.errors import DegenerateInput
from kmfm.metrics import rand_index


def best_partition_bruteforce(x, k):
    """Minimum within-cluster sum of squares over every labeling (tiny n only)."""
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(x)):
        labels = np.array(labels)
        if len(set(labels)) < k:
            continue
        cost = sum(((x[labels == j] - x[labels == j].mean(axis=0)) ** 2).sum() for j in range(k))
        best = min(best, cost)
    return best


def test_four_point_example():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    res = kmeans(X, KMeansConfig(k=2, seed=0))
    assert res.labels[0] == res.labels[1] != res.labels[2] == res.labels[3]
    np.testing.assert_allclose(np.sort(res.centroids[:, 0]), [0.05, 10.05])
    assert res.inertia == pytest.approx(0.01)
    assert res.inertia == pytest.approx(best_partition_bruteforce(X, 2))


def test_matches_bruteforce_optimum_small():
    rng = np.random.default_rng(0)
    for _ in range(10):
        X = rng.normal(size=(7, 2))
        res = kmeans(X, KMeansConfig(k=2, restarts=10, seed=1))
        assert res.inertia >= best_partition_bruteforce(X, 2) - 1e-12


def test_k_equals_n():
    X = np.random.default_rng(1).normal(size=(6, 3))
    res = kmeans(X, KMeansConfig(k=6))
    assert res.inertia == pytest.approx(0.0, abs=1e-20)
    assert len(set(res.labels)) == 6


def test_duplicated_rows_double_inertia():
    X = np.array([[0.0], [0.1], [10.0], [10.1], [5.0]])
    a = kmeans(X, KMeansConfig(k=2, seed=3))
    b = kmeans(np.vstack([X, X]), KMeansConfig(k=2, seed=3))
    np.testing.assert_allclose(np.sort(a.centroids, axis=0), np.sort(b.centroids, axis=0))
    assert b.inertia == pytest.approx(2 * a.inertia)


def test_lloyd_fixed_point_and_tie_break():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    C = np.array([[0.05], [10.05]])
    labels, newC, inertia = lloyd_step(X, C)
    np.testing.assert_array_equal(labels, [0, 0, 1, 1])
    np.testing.assert_allclose(newC, C)
    assert inertia == pytest.approx(inertia_of(X, labels, C))
    labels, _, _ = lloyd_step(np.array([[0.0]]), np.array([[-1.0], [1.0]]))
    assert labels[0] == 0


def test_lloyd_monotone_random():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n, k = int(rng.integers(5, 40)), int(rng.integers(2, 5))
        X = rng.normal(size=(n, 3))
        C = X[rng.choice(n, k, replace=False)] + rng.normal(scale=0.1, size=(k, 3))
        labels = np.argmin(((X[:, None] - C[None]) ** 2).sum(-1), axis=1)
        prev = inertia_of(X, labels, C)
        for _ in range(10):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EmptyClusterResolved)
                labels, C, cur = lloyd_step(X, C)
            assert cur <= prev * (1 + 1e-12) + 1e-12
            prev = cur


def test_empty_cluster_reseeded():
    X = np.array([[0.0], [1.0], [2.0], [50.0]])
    C = np.array([[1.0], [1000.0]])
    with pytest.warns(EmptyClusterResolved):
        labels, newC, _ = lloyd_step(X, C)
    assert labels[3] == 1
    np.testing.assert_allclose(newC[1], [50.0])


def test_restart_dominance_and_determinism():
    X = np.random.default_rng(5).normal(size=(60, 2))
    prev = np.inf
    for r in range(1, 8):
        res = kmeans(X, KMeansConfig(k=4, restarts=r, seed=9))
        assert res.inertia <= prev
        prev = res.inertia
    a = kmeans(X, KMeansConfig(k=4, seed=2))
    b = kmeans(X, KMeansConfig(k=4, seed=2))
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.inertia == b.inertia


def test_inertia_recomputation():
    X = np.random.default_rng(6).normal(size=(50, 3))
    res = kmeans(X, KMeansConfig(k=3))
    assert res.inertia == pytest.approx(inertia_of(X, res.labels, res.centroids), rel=1e-9)
    assert res.labels.min() >= 0 and res.labels.max() < 3


def test_separated_blobs_exact_recovery():
    rng = np.random.default_rng(7)
    truth = np.repeat([0, 1], 100)
    X = rng.normal(scale=0.1, size=(200, 5))
    X[truth == 1] += 1.0  # centre gap is 10x the per-coordinate spread
    res = kmeans(X, KMeansConfig(k=2))
    assert rand_index(res.labels, truth) == 1.0


def test_permutation_keeps_inertia():
    rng = np.random.default_rng(8)
    X = np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 6])
    perm = rng.permutation(60)
    a = kmeans(X, KMeansConfig(k=2))
    b = kmeans(X[perm], KMeansConfig(k=2))
    assert b.inertia == pytest.approx(a.inertia, rel=1e-9)


def test_errors():
    with pytest.raises(DegenerateInput):
        kmeans(np.zeros((3, 2)), KMeansConfig(k=4))
    with pytest.raises(DegenerateInput):
        KMeansConfig(k=0)
    with pytest.raises(DegenerateInput):
        kmeans(np.array([[np.nan, 0.0]]), KMeansConfig(k=1))
