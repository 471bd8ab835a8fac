"""Shared dense-algebra helpers for the estimator recursions.

Everything here operates on small dense symmetric matrices; all rank
decisions use a relative singular-value cutoff so behaviour is identical
across BLAS builds.
"""

import numpy as np

DEFAULT_RANK_TOL = 1e-10


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetrize a square matrix: (A + A^T)/2."""
    return 0.5 * (a + a.T)


def symmetry_defect(a: np.ndarray) -> float:
    """Max-abs asymmetry relative to the matrix scale (0 for exact symmetry)."""
    scale = max(float(np.max(np.abs(a))), 1.0)
    return float(np.max(np.abs(a - a.T))) / scale


def pinv_psd(a: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Pseudoinverse of a symmetric positive-semidefinite matrix.

    Eigenvalues below ``tol`` times the largest eigenvalue magnitude are
    truncated to zero, matching the relative cutoff used for all rank
    decisions in the filter/smoother steps. Returns the zero matrix when
    the input is (numerically) zero.
    """
    a = sym(np.asarray(a, dtype=float))
    if a.size == 0:
        return a.copy()
    w, v = np.linalg.eigh(a)
    cutoff = tol * max(float(np.max(np.abs(w))), 0.0)
    inv_w = np.where(w > cutoff, 1.0, 0.0) / np.where(w > cutoff, w, 1.0)
    return (v * inv_w) @ v.T


def range_basis(s: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the column space of a symmetric matrix.

    Rank is the number of singular values above ``tol`` times the largest
    one. Columns are ordered by descending singular value; each column's
    sign is fixed so its first nonzero entry is positive, which makes the
    basis deterministic across platforms. A zero matrix yields an empty
    (m, 0) basis, in which case callers must treat the associated gain as
    zero.
    """
    s = np.asarray(s, dtype=float)
    m = s.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    u, sv, _ = np.linalg.svd(sym(s))
    if sv[0] == 0.0:
        return np.zeros((m, 0))
    rank = int(np.sum(sv > tol * sv[0]))
    basis = u[:, :rank].copy()
    for j in range(rank):
        col = basis[:, j]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            basis[:, j] = -col
    return basis


def min_eigenvalue(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix (symmetrized first)."""
    if a.size == 0:
        return 0.0
    return float(np.min(np.linalg.eigvalsh(sym(a))))


def is_psd(a: np.ndarray, tol: float = 1e-10) -> bool:
    """True when the symmetrized matrix has no eigenvalue below -tol."""
    return min_eigenvalue(a) >= -tol
