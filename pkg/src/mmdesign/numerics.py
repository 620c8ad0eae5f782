"""Self-contained dense linear algebra used throughout the package.

Matrices are plain two-dimensional float64 numpy arrays. Three operations
are exposed: Gram-Schmidt orthonormalization, symmetric eigendecomposition
by cyclic Jacobi sweeps, and SPD solves by Cholesky factorization. All three
run on whichever kernel backend is active (compiled or pure Python); the
algorithms are identical in both.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._backend import backend_name, kernels

__all__ = [
    "EigenResult",
    "backend_name",
    "orthonormal_basis",
    "solve_spd",
    "sym_eigen",
]

SYMMETRY_TOL = 1e-10


class EigenResult(NamedTuple):
    """Eigendecomposition of a symmetric matrix.

    values: eigenvalues sorted descending.
    vectors: orthonormal eigenvectors in matching columns.
    """

    values: np.ndarray
    vectors: np.ndarray


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def orthonormal_basis(f) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of the column space of f.

    Returns (q, t) with q't q = I, f = q t, and t upper triangular with a
    positive diagonal (column-order Gram-Schmidt). Raises RankDeficient when
    a column's residual norm falls below 1e-12 relative to the Frobenius
    norm of f.
    """
    f = _as_matrix(f, "f")
    return kernels.mgs_qr(f)


def sym_eigen(m) -> EigenResult:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    The input must be symmetric within 1e-10 relative to its norm; it is
    symmetrized before iterating. Raises NoConvergence if the sweep budget
    is exhausted.
    """
    m = _as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"m must be square, got shape {m.shape}")
    scale = 1.0 + float(np.abs(m).max(initial=0.0))
    if float(np.abs(m - m.T).max(initial=0.0)) > SYMMETRY_TOL * scale:
        raise ValueError("m is not symmetric within tolerance")
    sym = 0.5 * (m + m.T)
    values, vectors = kernels.jacobi_eigh(sym)
    return EigenResult(values, vectors)


def solve_spd(m, b) -> np.ndarray:
    """Solve m x = b for symmetric positive definite m by Cholesky.

    b may be a vector or a matrix of right-hand sides. Raises
    NotPositiveDefinite when a Cholesky pivot falls to 1e-12 or below.
    """
    m = _as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"m must be square, got shape {m.shape}")
    b_arr = np.ascontiguousarray(b, dtype=np.float64)
    if b_arr.ndim not in (1, 2):
        raise ValueError(f"b must be 1-D or 2-D, got shape {b_arr.shape}")
    if b_arr.shape[0] != m.shape[0]:
        raise ValueError("m and b have incompatible shapes")
    if not np.all(np.isfinite(b_arr)):
        raise ValueError("b has non-finite entries")
    return kernels.chol_solve(m, b_arr)
