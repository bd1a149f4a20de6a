"""Seeded K-means: k-means++ seeding, Lloyd iterations, best of several restarts."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput


class EmptyClusterResolved(UserWarning):
    """An empty cluster was reseeded with the worst-fitting point."""


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 2
    restarts: int = 10
    max_iters: int = 300
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.restarts < 1 or self.max_iters < 1:
            raise DegenerateInput("k, restarts and max_iters must be positive")
        if self.tol < 0:
            raise DegenerateInput("tol must be >= 0")


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations_used: int
    restart_index: int
    history: list  # inertia after each Lloyd step of the winning restart


def sq_distances(X, C, chunk: int = 4096) -> np.ndarray:
    """Exact squared Euclidean distances ``(n, k)`` computed from differences."""
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], chunk):
        diff = X[s:s + chunk, None, :] - C[None, :, :]
        out[s:s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def inertia_of(X, labels, centroids) -> float:
    diff = X - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def lloyd_step(X, centroids):
    """Assign to the nearest centroid (lowest index on ties), move centroids to
    cluster means, and reseed empty clusters with the point farthest from its
    centroid. Returns ``(labels, new_centroids, inertia)`` where inertia is
    measured against the new centroids."""
    X = np.asarray(X, dtype=float)
    C = np.asarray(centroids, dtype=float)
    k = C.shape[0]
    d2 = sq_distances(X, C)
    labels = np.argmin(d2, axis=1)
    own = d2[np.arange(len(labels)), labels]
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        if not np.any(movable):
            break
        cand = np.where(movable, own, -np.inf)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
        own[i] = 0.0
        warnings.warn(f"cluster {j} was empty; reseeded with sample {i}", EmptyClusterResolved,
                      stacklevel=2)
    new = np.zeros_like(C)
    np.add.at(new, labels, X)
    nonempty = counts > 0
    new[nonempty] /= counts[nonempty, None]
    new[~nonempty] = C[~nonempty]
    return labels, new, inertia_of(X, labels, new)


def kmeans_plusplus(X, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = sq_distances(X, X[centers])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        closest = np.minimum(closest, sq_distances(X, X[[nxt]])[:, 0])
    return X[centers].copy()


def _single_run(X, cfg: KMeansConfig, restart: int):
    rng = np.random.default_rng(cfg.seed ^ restart)
    C = kmeans_plusplus(X, cfg.k, rng)
    prev = inertia_of(X, np.argmin(sq_distances(X, C), axis=1), C)
    history = []
    labels = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        labels, C, cur = lloyd_step(X, C)
        # the assignment and mean updates can only lower the objective
        assert cur <= prev * (1 + 1e-12) + 1e-12, (cur, prev)
        history.append(cur)
        if prev == 0 or (prev - cur) / prev < cfg.tol:
            prev = cur
            break
        prev = cur
    return KMeansResult(labels, C, inertia_of(X, labels, C), it, restart, history)


def kmeans(X, cfg: KMeansConfig) -> KMeansResult:
    """Best-inertia result over ``cfg.restarts`` seeded runs; restart ``r`` uses seed ``cfg.seed ^ r``.
    Ties keep the lowest restart index."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DegenerateInput("X must be a finite matrix")
    if cfg.k > X.shape[0]:
        raise DegenerateInput(f"k={cfg.k} exceeds n={X.shape[0]}")
    best = None
    for r in range(cfg.restarts):
        res = _single_run(X, cfg, r)
        if best is None or res.inertia < best.inertia:
            best = res
    return best
