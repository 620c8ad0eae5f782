"""Pure-Python kernel backend.

Mirrors the compiled backend ``mmdesign._kernels_cy`` function for function.
numpy supplies storage and matrix products; the orthonormalization, eigen,
and triangular-solve loops are written out here so the package carries its
own dense linear algebra instead of deferring to LAPACK.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NoConvergence, NotPositiveDefinite, RankDeficient

JACOBI_SWEEPS = 60
JACOBI_TOL = 1e-13
RANK_TOL = 1e-12
CHOL_PIVOT_TOL = 1e-12


def _offdiag_norm(a):
    # summed directly over off-diagonal entries; the frob**2 - diag**2
    # shortcut cancels catastrophically once the matrix is nearly diagonal
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return np.sqrt((off * off).sum())


def jacobi_eigh(a):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (values, vectors) with eigenvalues sorted descending and the
    matching eigenvectors in the columns of the second array. Sweeps run
    until the off-diagonal Frobenius mass falls below JACOBI_TOL times the
    Frobenius norm of the input; NoConvergence is raised if that has not
    happened within JACOBI_SWEEPS sweeps.
    """
    a = np.array(a, dtype=np.float64, order="C")
    p = a.shape[0]
    v = np.eye(p)
    if p == 1:
        return a.diagonal().copy(), v
    frob = np.sqrt((a * a).sum())
    if frob == 0.0:
        return np.zeros(p), v
    if not np.isfinite(frob):
        raise NoConvergence("non-finite entries in eigen input")
    tol = JACOBI_TOL * frob
    converged = False
    for _ in range(JACOBI_SWEEPS):
        if _offdiag_norm(a) <= tol:
            converged = True
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                apq = a[i, j]
                if apq == 0.0:
                    continue
                theta = 0.5 * (a[j, j] - a[i, i]) / apq
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                row_i = a[i, :].copy()
                row_j = a[j, :].copy()
                a[i, :] = c * row_i - s * row_j
                a[j, :] = s * row_i + c * row_j
                col_i = a[:, i].copy()
                col_j = a[:, j].copy()
                a[:, i] = c * col_i - s * col_j
                a[:, j] = s * col_i + c * col_j
                a[i, j] = 0.0
                a[j, i] = 0.0
                col_i = v[:, i].copy()
                col_j = v[:, j].copy()
                v[:, i] = c * col_i - s * col_j
                v[:, j] = s * col_i + c * col_j
    if not converged and _offdiag_norm(a) > tol:
        raise NoConvergence("jacobi sweep budget exhausted")
    w = a.diagonal().copy()
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(v[:, order])


def mgs_qr(f):
    """Column-order modified Gram-Schmidt with one reorthogonalization pass.

    Returns (q, t) with q'q = I and f = q t, t upper triangular with positive
    diagonal. A column whose residual norm falls below RANK_TOL times the
    Frobenius norm of f raises RankDeficient.
    """
    f = np.array(f, dtype=np.float64, order="C")
    n, p = f.shape
    if p == 0 or n < p:
        raise RankDeficient(f"cannot orthonormalize {p} columns of length {n}")
    scale = np.sqrt((f * f).sum())
    if scale == 0.0 or not np.isfinite(scale):
        raise RankDeficient("zero or non-finite input")
    q = f.copy()
    t = np.zeros((p, p))
    for j in range(p):
        vcol = q[:, j].copy()
        for _ in range(2):
            for i in range(j):
                r = q[:, i] @ vcol
                t[i, j] += r
                vcol -= r * q[:, i]
        norm = np.sqrt(vcol @ vcol)
        if norm <= RANK_TOL * scale:
            raise RankDeficient(f"column {j} is numerically dependent on earlier columns")
        t[j, j] = norm
        q[:, j] = vcol / norm
    return q, t


def chol_factor(m):
    """Lower Cholesky factor of an SPD matrix.

    Raises NotPositiveDefinite when a pivot is at or below CHOL_PIVOT_TOL.
    """
    m = np.array(m, dtype=np.float64, order="C")
    p = m.shape[0]
    low = np.zeros((p, p))
    for j in range(p):
        d = m[j, j] - low[j, :j] @ low[j, :j]
        if not d > CHOL_PIVOT_TOL:
            raise NotPositiveDefinite(f"pivot {d!r} at column {j}")
        ljj = np.sqrt(d)
        low[j, j] = ljj
        if j + 1 < p:
            low[j + 1 :, j] = (m[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / ljj
    return low


def _solve_factored(low, b):
    """Solve (low low') x = b by forward and back substitution."""
    p = low.shape[0]
    y = np.zeros_like(b)
    for i in range(p):
        y[i] = (b[i] - low[i, :i] @ y[:i]) / low[i, i]
    x = np.zeros_like(b)
    for i in range(p - 1, -1, -1):
        x[i] = (y[i] - low[i + 1 :, i] @ x[i + 1 :]) / low[i, i]
    return x


def chol_solve(m, b):
    """Solve m x = b for SPD m via Cholesky. b may be a vector or a matrix."""
    b = np.array(b, dtype=np.float64)
    one_d = b.ndim == 1
    if one_d:
        b = b[:, None]
    x = _solve_factored(chol_factor(m), b)
    return x[:, 0] if one_d else x


def _trace_inv(low):
    """Trace of (low low')^{-1} via the Frobenius norm of low^{-1}."""
    p = low.shape[0]
    z = np.zeros((p, p))
    for j in range(p):
        z[j, j] = 1.0 / low[j, j]
        for i in range(j + 1, p):
            z[i, j] = -(low[i, j:i] @ z[j:i, j]) / low[i, i]
    return float((z * z).sum())


def _chmax_u(low, s):
    """Largest eigenvalue of R^{-1} S R^{-1} given the Cholesky factor of R."""
    y = _solve_factored(low, s)
    u = _solve_factored(low, np.ascontiguousarray(y.T))
    u = 0.5 * (u + u.T)
    return float(jacobi_eigh(u)[0][0]), u


def criterion_parts(q, w):
    """(trace of R^{-1}, largest eigenvalue of U) for weights w on basis q.

    R = q' diag(w) q and U = R^{-1} q' diag(w)^2 q R^{-1}. Raises
    NotPositiveDefinite when R has no Cholesky factorization, which callers
    treat as a singular design.
    """
    q = np.asarray(q, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r = (q * w[:, None]).T @ q
    s = (q * (w * w)[:, None]).T @ q
    low = chol_factor(r)
    tr = _trace_inv(low)
    chmax, _ = _chmax_u(low, s)
    return tr, chmax


def t_values_exact(q, w, k, nu):
    """Exact one-point-addition improvements at virtual count k.

    For each candidate i the loss of the updated design
    (k w + e_i) / (k + 1) is recomputed exactly and
    t_i = k * (I_nu(current) - I_nu(updated)). Returns
    (t, trace_rinv, chmax_u, i_nu) where the last three describe the
    current design.
    """
    q = np.asarray(q, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = q.shape[0]
    r = (q * w[:, None]).T @ q
    s = (q * (w * w)[:, None]).T @ q
    low = chol_factor(r)
    tr0 = _trace_inv(low)
    ch0, _ = _chmax_u(low, s)
    i0 = (1.0 - nu) * tr0 + nu * ch0
    kp1 = k + 1.0
    shrink = k / kp1
    t = np.empty(n)
    for i in range(n):
        qi = q[i]
        outer = np.outer(qi, qi)
        ri = shrink * r + outer / kp1
        li = chol_factor(ri)
        tri = _trace_inv(li)
        if nu != 0.0:
            si = (shrink * shrink) * s + ((2.0 * k * w[i] + 1.0) / (kp1 * kp1)) * outer
            chi, _ = _chmax_u(li, si)
            inew = (1.0 - nu) * tri + nu * chi
        else:
            inew = tri
        t[i] = k * (i0 - inew)
    return t, tr0, ch0, i0
