"""Rand Index and Normalized Mutual Information between two partitions.

Sums use ``math.fsum`` so results do not depend on label order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import LengthMismatch, TooFewSamples


@dataclass(frozen=True)
class PairCounts:
    TP: int
    TN: int
    FP: int
    FN: int

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN


@dataclass(frozen=True)
class Contingency:
    table: np.ndarray  # rows: predicted clusters, columns: true classes

    @property
    def row_sums(self):
        return self.table.sum(axis=1)

    @property
    def col_sums(self):
        return self.table.sum(axis=0)

    @property
    def N(self) -> int:
        return int(self.table.sum())


def _check(pred, truth, min_n=1):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise LengthMismatch(f"label vectors differ: {pred.shape} vs {truth.shape}")
    if pred.size < min_n:
        raise TooFewSamples(f"need at least {min_n} samples, got {pred.size}")
    return pred, truth


def contingency(pred, truth) -> Contingency:
    pred, truth = _check(pred, truth)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return Contingency(table)


def _choose2(a):
    a = np.asarray(a, dtype=np.int64)
    return int(np.sum(a * (a - 1) // 2))


def pair_counts(pred, truth) -> PairCounts:
    """Pair agreement counts from the contingency table in O(n + k k*)."""
    pred, truth = _check(pred, truth)
    c = contingency(pred, truth)
    n = c.N
    tp = _choose2(c.table)
    same_pred = _choose2(c.row_sums)
    same_truth = _choose2(c.col_sums)
    fp = same_pred - tp
    fn = same_truth - tp
    tn = n * (n - 1) // 2 - tp - fp - fn
    return PairCounts(tp, tn, fp, fn)


def pair_counts_bruteforce(pred, truth) -> PairCounts:
    """Reference O(n^2) enumeration over unordered pairs."""
    pred, truth = _check(pred, truth)
    tp = tn = fp = fn = 0
    for i, j in combinations(range(pred.size), 2):
        sp_, st = pred[i] == pred[j], truth[i] == truth[j]
        if sp_ and st:
            tp += 1
        elif not sp_ and not st:
            tn += 1
        elif sp_:
            fp += 1
        else:
            fn += 1
    return PairCounts(tp, tn, fp, fn)


def rand_index(pred, truth) -> float:
    pred, truth = _check(pred, truth, min_n=2)
    c = pair_counts(pred, truth)
    return (c.TP + c.TN) / c.total


def nmi(pred, truth) -> float:
    """Mutual information over the geometric mean of the two entropies (natural log).

    Defined as 0 when either partition has a single cluster.
    """
    pred, truth = _check(pred, truth, min_n=2)
    c = contingency(pred, truth)
    N = c.N
    rows, cols = c.row_sums, c.col_sums
    if len(rows) < 2 or len(cols) < 2:
        return 0.0
    terms = []
    for (j, jp), njj in np.ndenumerate(c.table):
        if njj:
            terms.append(njj * math.log(N * njj / (rows[j] * cols[jp])))
    num = math.fsum(terms)
    h_pred = math.fsum(nj * math.log(nj / N) for nj in rows if nj)
    h_truth = math.fsum(nj * math.log(nj / N) for nj in cols if nj)
    value = num / math.sqrt(h_pred * h_truth)
    return min(max(value, 0.0), 1.0)
