"""Dense linear algebra kernels: matmul, row softmax, SVD, top-k, cosine.

All public functions take and return plain 2-D float64 ``numpy`` arrays
(vectors where noted).  The SVD is a one-sided Jacobi iteration, accurate to
~1e-12 at the matrix sizes used here (<= a few hundred rows); the inner
rotation loop is JIT-compiled with numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericError, ParameterError, ShapeError

_JACOBI_TOL = 1e-10
_MAX_SWEEPS = 100


def _as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains non-finite entries")
    return m


def _as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def matmul(a, b) -> np.ndarray:
    """Standard matrix product with an explicit inner-dimension check."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    m = _as_matrix(m, "m")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``input = u @ diag(sigma) @ vt`` with p = min(m, n) triplets.

    ``sigma`` is non-negative and non-increasing; columns of ``u`` and rows
    of ``vt`` are orthonormal.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


@njit(cache=True)
def _jacobi_rotate(w: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    """One-sided Jacobi column orthogonalization of ``w`` (m x n, m >= n).

    ``v`` accumulates the applied rotations.  Returns the number of sweeps
    used, or -1 if the off-diagonal mass did not fall below ``tol``
    (relative) within ``max_sweeps`` sweeps.
    """
    m, n = w.shape
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                p = 0.0
                qi = 0.0
                qj = 0.0
                for r in range(m):
                    p += w[r, i] * w[r, j]
                    qi += w[r, i] * w[r, i]
                    qj += w[r, j] * w[r, j]
                if abs(p) <= tol * math.sqrt(qi * qj):
                    continue
                rotated = True
                zeta = (qj - qi) / (2.0 * p)
                if zeta > 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                elif zeta < 0.0:
                    t = 1.0 / (zeta - math.sqrt(1.0 + zeta * zeta))
                else:
                    t = 1.0
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    wi = w[r, i]
                    wj = w[r, j]
                    w[r, i] = c * wi - s * wj
                    w[r, j] = s * wi + c * wj
                for r in range(n):
                    vi = v[r, i]
                    vj = v[r, j]
                    v[r, i] = c * vi - s * vj
                    v[r, j] = s * vi + c * vj
        if not rotated:
            return sweep + 1
    return -1


def _complete_orthonormal(u: np.ndarray, dead: np.ndarray) -> None:
    """Fill zero columns of ``u`` with canonical-basis Gram-Schmidt vectors."""
    m = u.shape[0]
    for j in np.flatnonzero(dead):
        for basis in range(m):
            cand = np.zeros(m)
            cand[basis] = 1.0
            cand -= u @ (u.T @ cand)
            norm = np.linalg.norm(cand)
            if norm > 0.5:
                u[:, j] = cand / norm
                break


def svd(m) -> SvdResult:
    """Thin SVD via one-sided Jacobi (transposing internally when m < n)."""
    a = _as_matrix(m, "m")
    rows, cols = a.shape
    if rows < cols:
        flipped = svd(a.T)
        return SvdResult(u=flipped.vt.T, sigma=flipped.sigma, vt=flipped.u.T)

    w = a.copy()
    v = np.eye(cols)
    sweeps = _jacobi_rotate(w, v, _JACOBI_TOL, _MAX_SWEEPS)
    if sweeps < 0:
        raise NumericError(f"Jacobi SVD did not converge within {_MAX_SWEEPS} sweeps")

    sigma = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]

    scale = sigma.max(initial=0.0)
    dead = sigma <= max(scale, 1.0) * 1e-14 * rows
    u = np.zeros_like(w)
    alive = ~dead
    u[:, alive] = w[:, alive] / sigma[alive]
    sigma[dead] = 0.0
    if dead.any():
        _complete_orthonormal(u, dead)
    return SvdResult(u=u, sigma=sigma, vt=v.T)


def truncated_reconstruct(m, r: int) -> np.ndarray:
    """Best rank-``r`` reconstruction from the top-r singular triplets."""
    a = _as_matrix(m, "m")
    if not 1 <= r <= min(a.shape):
        raise ParameterError(f"r={r} out of range for shape {a.shape}")
    res = svd(a)
    return (res.u[:, :r] * res.sigma[:r]) @ res.vt[:r]


def topk_indices(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, descending; ties favor lower index."""
    s = _as_vector(scores, "scores")
    if k > s.shape[0]:
        raise ParameterError(f"k={k} exceeds vector length {s.shape[0]}")
    order = np.argsort(-s, kind="stable")
    return order[:k]


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors; 0 when either is near-zero."""
    u = _as_vector(u, "u")
    v = _as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
