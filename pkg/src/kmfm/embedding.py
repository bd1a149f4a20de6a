"""Latent concatenation, affinity kernels and the locality preserving projection.

Shapes follow the column convention: ``W`` is ``(D, n)`` with one latent code per
column, ``V`` is ``(D, L)``, and a projected sample is ``V.T @ w``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import AsymmetricInput, BadL, RankDeficient, ShapeMismatch


class KernelClampWarning(UserWarning):
    """Negative affinities were set to zero."""


@dataclass(frozen=True)
class LatentEmbedding:
    W: np.ndarray

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]


def concat_latents(y_num, y_cat) -> LatentEmbedding:
    """Stack each sample's categorical-input code above its numerical-input code."""
    y_num = np.asarray(y_num, dtype=float)
    y_cat = np.asarray(y_cat, dtype=float)
    if y_num.ndim != 2 or y_cat.ndim != 2 or y_num.shape[0] != y_cat.shape[0]:
        raise ShapeMismatch(f"latent blocks {y_num.shape} and {y_cat.shape} do not align")
    if y_num.shape[0] == 0:
        raise ShapeMismatch("no samples")
    W = np.vstack([y_cat.T, y_num.T])
    if not np.all(np.isfinite(W)):
        raise ShapeMismatch("latent codes must be finite")
    return LatentEmbedding(np.ascontiguousarray(W))


@dataclass(frozen=True)
class KernelSpec:
    degree: int = 2
    offset: float = 1.0
    row_normalize: bool = False
    knn: Optional[int] = None  # keep the k largest affinities per row (sparse mode)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("kernel degree must be >= 1")
        if self.offset < 0:
            raise ValueError("kernel offset must be >= 0")
        if self.knn is not None and self.knn < 1:
            raise ValueError("knn must be >= 1")

    def to_dict(self):
        return {"degree": self.degree, "offset": self.offset,
                "row_normalize": self.row_normalize, "knn": self.knn}


def _prep_rows(X, spec: KernelSpec) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatch("kernel input must be a matrix")
    if not np.all(np.isfinite(X)):
        raise ShapeMismatch("kernel input must be finite")
    if spec.row_normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms > 0, norms, 1.0)
    return X


def _clamp(S):
    neg = S < 0
    if np.any(neg):
        warnings.warn(f"{int(neg.sum())} negative kernel entries clamped to 0", KernelClampWarning,
                      stacklevel=3)
        S[neg] = 0.0
    return S


def polynomial_kernel(X, spec: KernelSpec = KernelSpec()) -> np.ndarray:
    """Dense ``(x_i . x_j + offset) ** degree`` over the rows of ``X``."""
    X = _prep_rows(X, spec)
    S = (X @ X.T + spec.offset) ** spec.degree
    S = 0.5 * (S + S.T)
    return _clamp(S)


def knn_polynomial_kernel(X, spec: KernelSpec, block: int = 2048) -> sp.csr_matrix:
    """Sparse kernel keeping the ``spec.knn`` largest entries of each row,
    symmetrized by elementwise max. Row blocks keep memory at ``block * n``."""
    X = _prep_rows(X, spec)
    n = X.shape[0]
    k = min(spec.knn, n)
    rows, cols, vals = [], [], []
    for s in range(0, n, block):
        blk = (X[s:s + block] @ X.T + spec.offset) ** spec.degree
        blk[blk < 0] = 0.0
        idx = np.argpartition(-blk, k - 1, axis=1)[:, :k]
        r = np.repeat(np.arange(s, s + blk.shape[0]), k)
        rows.append(r)
        cols.append(idx.ravel())
        vals.append(np.take_along_axis(blk, idx, axis=1).ravel())
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return S.maximum(S.T).tocsr()


def build_kernel(X, spec: KernelSpec):
    return polynomial_kernel(X, spec) if spec.knn is None else knn_polynomial_kernel(X, spec)


def _check_symmetric(S, tol=1e-12):
    if S.shape[0] != S.shape[1]:
        raise ShapeMismatch("kernel must be square")
    if sp.issparse(S):
        diff = abs(S - S.T)
        worst = diff.max() if diff.nnz else 0.0
    else:
        worst = np.max(np.abs(S - S.T)) if S.size else 0.0
    if worst > tol:
        raise AsymmetricInput(f"kernel asymmetry {worst:.3g} exceeds {tol}")


def degree_vector(S) -> np.ndarray:
    """Row sums of ``S`` (the diagonal of the degree matrix)."""
    _check_symmetric(S)
    return np.asarray(S.sum(axis=1)).ravel()


def degree_matrix(S) -> np.ndarray:
    return np.diag(degree_vector(S))


def _laplacian_forms(W, S, lam):
    """``W (Lambda - S) W^T`` and ``W Lambda W^T``, symmetrized."""
    WL = W * lam
    B = WL @ W.T
    SWt = S @ W.T
    A = B - W @ np.asarray(SWt)
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def locality_penalty(V, W, S) -> float:
    """Sum over pairs of ``s_ij * ||V^T w_i - V^T w_j||^2``, evaluated as
    ``2 tr(V^T W (Lambda - S) W^T V)``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    W = np.asarray(W, dtype=float)
    if V.shape[0] != W.shape[0] or S.shape != (W.shape[1], W.shape[1]):
        raise ShapeMismatch(f"V {V.shape}, W {W.shape}, S {S.shape} are not conformable")
    P = W.T @ V  # projected samples, (n, L)
    lam = np.asarray(S.sum(axis=1)).ravel()
    quad = float(np.sum(lam[:, None] * P * P) - np.sum(P * np.asarray(S @ P)))
    return 2.0 * quad


@dataclass
class LppSolution:
    V: np.ndarray
    eigenvalues: np.ndarray
    S: Union[np.ndarray, sp.spmatrix, None]
    degrees: np.ndarray
    ridge: float

    @property
    def L(self) -> int:
        return self.V.shape[1]

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.degrees)

    def truncate(self, L: int) -> "LppSolution":
        if not 1 <= L <= self.V.shape[1]:
            raise BadL(f"L={L} outside 1..{self.V.shape[1]}")
        return LppSolution(self.V[:, :L], self.eigenvalues[:L], self.S, self.degrees, self.ridge)


MAX_COND = 1e10


def default_ridge(W, lam) -> float:
    B_trace = float(np.sum((W * W) @ lam))
    return 1e-8 * B_trace / W.shape[0]


def solve_lpp(W, S, L: int, ridge: Optional[float] = None) -> LppSolution:
    """Smallest-``L`` eigenpairs of ``W(Lambda-S)W^T v = eta (W Lambda W^T + ridge I) v``.

    Eigenvectors are rescaled so that ``v^T W Lambda W^T v = 1`` and signed so
    each vector's largest-magnitude entry is positive. Eigenvalues ascend.
    With ``ridge=None`` no ridge is added unless ``W Lambda W^T`` is close to
    singular (condition number above ``MAX_COND``), in which case a small
    trace-relative one is used.
    """
    W = np.asarray(W, dtype=float)
    D, n = W.shape
    if S.shape != (n, n):
        raise ShapeMismatch(f"kernel {S.shape} does not match {n} samples")
    if not 1 <= L <= D:
        raise BadL(f"L={L} must lie in 1..{D}")
    lam = degree_vector(S)
    A, B0 = _laplacian_forms(W, S, lam)
    if ridge is None:
        ridge = 0.0 if np.linalg.cond(B0) < MAX_COND else default_ridge(W, lam)
    B = B0 + ridge * np.eye(D)
    try:
        eta, vecs = scipy.linalg.eigh(A, B, subset_by_index=[0, L - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RankDeficient(f"generalized eigenproblem is singular after ridge {ridge:.3g}: {exc}") from None
    scale = np.einsum("ij,ij->j", vecs, B0 @ vecs)
    if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
        raise RankDeficient("an eigenvector has no mass under W Lambda W^T")
    vecs = vecs / np.sqrt(scale)
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    return LppSolution(vecs, eta, S, lam, float(ridge))


def project(V, w) -> np.ndarray:
    """``V^T w`` for one code (vector) or ``(V^T W)^T`` rows for a ``(D, n)`` matrix."""
    V = np.asarray(V, dtype=float)
    w = np.asarray(w, dtype=float)
    if V.ndim != 2 or w.shape[0] != V.shape[0]:
        raise ShapeMismatch(f"V {V.shape} and w {w.shape} are not conformable")
    out = V.T @ w
    return out if w.ndim == 1 else out.T
