"""Dense symmetric linear algebra for the full Bayesian posterior.

The posterior precision matrix starts diagonal and only ever receives
rank-1 updates whose off-diagonal parts average out, so it stays close to
diagonal.  That is what makes Gauss-Jordan elimination without pivoting
adequate here; a vanishing pivot is reported instead of dividing by zero.
"""

from __future__ import annotations

import numpy as np
from numba import njit

PIVOT_FLOOR: float = 1e-300


class SingularMatrixError(ArithmeticError):
    """A zero pivot was met during elimination without pivoting."""


def diag_precision(spreads) -> np.ndarray:
    """Diagonal precision matrix ``diag(1 / s**2)`` from prior spreads."""
    s = np.atleast_1d(np.asarray(spreads, dtype=np.float64))
    if s.ndim != 1 or s.size == 0:
        msg = "spreads must be a non-empty vector"
        raise ValueError(msg)
    if not np.isfinite(s).all() or (s <= 0.0).any():
        msg = "every spread must be positive and finite"
        raise ValueError(msg)
    return np.diag(1.0 / (s * s))


@njit(cache=True, nogil=True)
def _rank1_update_inplace(m, g, tau2):
    n = g.shape[0]
    for i in range(n):
        for j in range(n):
            # (g_i * g_j) is commutative in IEEE arithmetic, so m stays exactly symmetric.
            m[i, j] += (g[i] * g[j]) / tau2


@njit(cache=True, nogil=True)
def _gauss_jordan_inplace(a, b):
    n = b.shape[0]
    for k in range(n):
        pivot = a[k, k]
        if not abs(pivot) >= PIVOT_FLOOR:
            raise SingularMatrixError("zero pivot in Gauss-Jordan elimination")
        inv = 1.0 / pivot
        for j in range(k, n):
            a[k, j] *= inv
        b[k] *= inv
        for i in range(n):
            if i == k:
                continue
            f = a[i, k]
            if f != 0.0:
                for j in range(k, n):
                    a[i, j] -= f * a[k, j]
                b[i] -= f * b[k]


def _check_square(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        msg = f"expected a non-empty square matrix, got shape {m.shape}"
        raise ValueError(msg)
    return m


def rank1_precision_update(m, g, tau: float) -> np.ndarray:
    """Return ``m + g g^T / tau**2`` as a new matrix."""
    m = _check_square(m)
    g = np.atleast_1d(np.asarray(g, dtype=np.float64))
    if g.shape != (m.shape[0],):
        msg = f"update vector has shape {g.shape}, expected ({m.shape[0]},)"
        raise ValueError(msg)
    if not np.all(np.isfinite(g)):
        msg = "update vector must be finite"
        raise ValueError(msg)
    if not (np.isfinite(tau) and tau > 0.0):
        msg = f"tau must be positive and finite, got {tau!r}"
        raise ValueError(msg)
    out = np.array(m, dtype=np.float64, order="C", copy=True)
    _rank1_update_inplace(out, g, float(tau) * float(tau))
    return out


def solve_gauss_jordan(m, rhs) -> np.ndarray:
    """Solve ``m @ b = rhs`` by Gauss-Jordan elimination without pivoting.

    Neither argument is modified.  Raises :class:`SingularMatrixError` when
    a diagonal pivot vanishes during elimination.
    """
    m = _check_square(m)
    rhs = np.atleast_1d(np.asarray(rhs, dtype=np.float64))
    if rhs.shape != (m.shape[0],):
        msg = f"right-hand side has shape {rhs.shape}, expected ({m.shape[0]},)"
        raise ValueError(msg)
    a = np.array(m, dtype=np.float64, order="C", copy=True)
    b = rhs.copy()
    _gauss_jordan_inplace(a, b)
    return b
