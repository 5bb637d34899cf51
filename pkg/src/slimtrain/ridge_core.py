"""Dense Tikhonov kernel built on a thin SVD.

One factorization of the stacked matrix ``M`` serves every shifted solve
``(M^T M + shift I)^{-1} M^T rhs`` and every filtered trace needed by the
regularization-parameter scan, so the shift can be changed cheaply.
"""
from dataclasses import dataclass

import numpy as np

# relative cutoff used only by the shift -> 0 limit path
ZERO_SV_RTOL = 1e-14


@dataclass(frozen=True)
class RidgeFactors:
    """Thin SVD ``M = U diag(s) V^T`` of a ``rows x cols`` matrix."""

    left_vectors: np.ndarray    # rows x p
    singular_values: np.ndarray  # p, descending
    right_vectors: np.ndarray   # cols x p
    rows: int
    cols: int

    @property
    def rank_deficient_cols(self):
        """True when the right singular vectors do not span R^cols."""
        return self.right_vectors.shape[1] < self.cols

    def reconstruct(self):
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _check_shift(shift):
    if not shift > 0 or not np.isfinite(shift):
        raise ValueError(f"shift must be a positive finite number, got {shift!r}")


def factorize(M):
    """Thin SVD of ``M``; rejects empty or non-finite input."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return RidgeFactors(U, s, Vt.T, M.shape[0], M.shape[1])


def _as_columns(x, nrows, what):
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != nrows:
        raise ValueError(f"{what} must have {nrows} rows, got shape {x.shape}")
    return x, vec


def ridge_solve(factors, rhs, shift):
    """Solve ``(M^T M + shift I) X = M^T rhs`` column by column.

    Uses the filter factors ``s / (s^2 + shift)``; no truncation is applied
    for positive shifts.
    """
    _check_shift(shift)
    B, vec = _as_columns(rhs, factors.rows, "rhs")
    s = factors.singular_values
    X = factors.right_vectors @ ((s / (s * s + shift))[:, None] * (factors.left_vectors.T @ B))
    return X[:, 0] if vec else X


def shifted_inverse_apply(factors, G, shift):
    """Apply ``(M^T M + shift I)^{-1}`` to the columns of ``G``.

    The component of ``G`` outside the span of the right singular vectors
    only sees the shift.
    """
    _check_shift(shift)
    G, vec = _as_columns(G, factors.cols, "G")
    V = factors.right_vectors
    s = factors.singular_values
    VtG = V.T @ G
    X = V @ (VtG / (s * s + shift)[:, None])
    if factors.rank_deficient_cols:
        X += (G - V @ VtG) / shift
    return X[:, 0] if vec else X


def filtered_trace(factors, probe, shift):
    """``trace(P^T (M^T M + shift I)^{-1} P)`` from the singular values alone."""
    _check_shift(shift)
    P, _ = _as_columns(probe, factors.cols, "probe")
    V = factors.right_vectors
    s = factors.singular_values
    VtP = V.T @ P
    q = np.einsum("ij,ij->i", VtP, VtP)
    total = float(np.sum(q / (s * s + shift)))
    if factors.rank_deficient_cols:
        rest = P - V @ VtP
        total += float(np.sum(rest * rest)) / shift
    return max(total, 0.0)


def limit_solve(factors, rhs):
    """Minimum-norm least-squares solution, the ``shift -> 0+`` limit.

    Singular values below ``1e-14 * s_max`` are treated as exact zeros.
    """
    B, vec = _as_columns(rhs, factors.rows, "rhs")
    s = factors.singular_values
    keep = s > ZERO_SV_RTOL * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    X = factors.right_vectors @ (inv[:, None] * (factors.left_vectors.T @ B))
    return X[:, 0] if vec else X


def numerical_rank(factors):
    s = factors.singular_values
    if s.size == 0:
        return 0
    return int(np.sum(s > ZERO_SV_RTOL * s[0]))
