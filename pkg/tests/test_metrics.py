import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmfm.errors import LengthMismatch, TooFewSamples
from kmfm.metrics import (
    contingency,
    nmi,
    pair_counts,
    pair_counts_bruteforce,
    rand_index,
)


def nmi_bruteforce(pred, truth):
    """Direct entropy/mutual-information definition from label frequencies."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    n = len(pred)
    pu, tu = np.unique(pred), np.unique(truth)
    if len(pu) < 2 or len(tu) < 2:
        return 0.0
    mi = 0.0
    for a in pu:
        for b in tu:
            nab = np.sum((pred == a) & (truth == b))
            if nab:
                mi += nab / n * np.log(n * nab / (np.sum(pred == a) * np.sum(truth == b)))
    hp = -sum(np.mean(pred == a) * np.log(np.mean(pred == a)) for a in pu)
    ht = -sum(np.mean(truth == b) * np.log(np.mean(truth == b)) for b in tu)
    return mi / np.sqrt(hp * ht)


def test_rand_index_worked_example():
    truth, pred = [0, 0, 1, 1], [0, 1, 1, 1]
    c = pair_counts(pred, truth)
    assert (c.TP, c.TN, c.FP, c.FN) == (1, 2, 2, 1)
    assert c == pair_counts_bruteforce(pred, truth)
    assert rand_index(pred, truth) == 0.5


def test_single_pair_counts():
    assert pair_counts([0, 0], [1, 1]).TP == 1
    assert pair_counts([0, 1], [1, 1]).FN == 1


def test_nmi_identical_partitions():
    assert nmi([0, 0, 1, 1, 2], [5, 5, 7, 7, 9]) == 1.0


def test_nmi_independent_table():
    # contingency [[1, 1], [1, 1]]
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0


def test_nmi_single_cluster_is_zero():
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0


def test_pair_counts_total():
    c = pair_counts([0, 1, 1, 2, 2, 2], [0, 0, 1, 1, 2, 2])
    assert c.total == 15


def test_contingency_rows_are_predictions():
    c = contingency([0, 0, 1], [1, 0, 0])
    np.testing.assert_array_equal(c.table, [[1, 1], [1, 0]])
    assert c.N == 3


def test_fast_path_matches_bruteforce_random():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        a = rng.integers(0, rng.integers(1, 6), n)
        b = rng.integers(0, rng.integers(1, 6), n)
        assert pair_counts(a, b) == pair_counts_bruteforce(a, b)
        assert nmi(a, b) == pytest.approx(nmi_bruteforce(a, b), abs=1e-12)


def test_relabeling_invariance_exact():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        a = rng.integers(0, 4, n)
        b = rng.integers(0, 3, n)
        perm = rng.permutation(10)
        assert rand_index(perm[a], b) == rand_index(a, b)
        assert nmi(perm[a], b) == nmi(a, b)
        assert nmi(a, perm[b]) == nmi(a, b)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=50))
def test_metrics_bounds_and_symmetry(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    assert 0.0 <= rand_index(a, b) <= 1.0
    assert 0.0 <= nmi(a, b) <= 1.0
    assert rand_index(a, b) == rand_index(b, a)
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-15)


def test_errors():
    with pytest.raises(LengthMismatch):
        rand_index([0, 1], [0, 1, 1])
    with pytest.raises(TooFewSamples):
        nmi([0], [0])
