"""Dense linear algebra: SVD, row-space projectors and subspace alignment.

Matrices are plain 2-D float64 numpy arrays. All functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = left @ diag(singular_values) @ right.T``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T


def _as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return A


def svd(A) -> SvdResult:
    """Thin SVD with singular values in non-increasing order.

    Backed by LAPACK ``gesdd`` through numpy; for a fixed input and build the
    output is deterministic.
    """
    A = _as_matrix(A)
    left, s, vt = np.linalg.svd(A, full_matrices=False)
    return SvdResult(left=left, singular_values=s, right=vt.T)


def operator_norm(A) -> float:
    """Largest singular value s_1(A)."""
    A = _as_matrix(A)
    return float(np.linalg.svd(A, compute_uv=False)[0])


def row_basis(A, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of Row(A) as the rows of an r x d matrix.

    Singular values at or below ``rank_tol * s_1`` are treated as zero. The
    zero matrix has an empty (0 x d) basis.
    """
    A = _as_matrix(A)
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((0, A.shape[1]))
    rank = int(np.sum(s > rank_tol * s[0]))
    return vt[:rank]


def row_space_projector(A, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthogonal projector P_A = A^+ A onto Row(A), as a d x d matrix."""
    B = row_basis(A, rank_tol)
    P = B.T @ B
    # exact symmetry; B.T @ B is symmetric only up to roundoff
    return 0.5 * (P + P.T)


def alignment(W, U, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Cosine of the smallest principal angle between Row(W) and Row(U).

    Equal to ||P_W P_U||_op, computed as s_1 of the small r_W x r_U product of
    orthonormal row bases. Zero if either matrix is zero.
    """
    W = _as_matrix(W, "W")
    U = _as_matrix(U, "U")
    if W.shape[1] != U.shape[1]:
        raise DimensionMismatch(f"W has {W.shape[1]} columns, U has {U.shape[1]}")
    Bw = row_basis(W, rank_tol)
    Bu = row_basis(U, rank_tol)
    if Bw.shape[0] == 0 or Bu.shape[0] == 0:
        return 0.0
    rho = np.linalg.svd(Bw @ Bu.T, compute_uv=False)[0]
    return float(min(max(rho, 0.0), 1.0))


def alignment_vectors(w: np.ndarray, u: np.ndarray) -> float:
    """Fast path of :func:`alignment` for single rows: |<w,u>| / (||w|| ||u||)."""
    nw = np.sqrt(w @ w)
    nu = np.sqrt(u @ u)
    if nw == 0.0 or nu == 0.0:
        return 0.0
    return float(min(abs(w @ u) / (nw * nu), 1.0))
