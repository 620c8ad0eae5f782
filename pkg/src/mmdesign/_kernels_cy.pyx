# cython: language_level=3
"""Compiled kernel backend.

Function-for-function twin of mmdesign._kernels_py with the loops in C.
The two backends implement the same algorithms and are cross-checked by
the test suite; see the benchmark script for the speed comparison.
"""

import numpy as np

from libc.math cimport fabs, sqrt

from .exceptions import NoConvergence, NotPositiveDefinite, RankDeficient

JACOBI_SWEEPS = 60
JACOBI_TOL = 1e-13
RANK_TOL = 1e-12
CHOL_PIVOT_TOL = 1e-12

cdef int _N_SWEEPS = 60
cdef double _J_TOL = 1e-13
cdef double _R_TOL = 1e-12
cdef double _C_TOL = 1e-12


cdef double _offdiag_norm(double[:, ::1] a) noexcept nogil:
    cdef Py_ssize_t p = a.shape[0]
    cdef Py_ssize_t i, j
    cdef double off = 0.0
    for i in range(p):
        for j in range(p):
            if i != j:
                off += a[i, j] * a[i, j]
    return sqrt(off)


cdef int _jacobi_core(double[:, ::1] a, double[:, ::1] v, bint want_vectors) noexcept nogil:
    """Cyclic Jacobi in place on a; rotations accumulate into v when asked.

    Returns 0 on convergence, 1 on sweep-budget exhaustion, 2 on NaN input.
    """
    cdef Py_ssize_t p = a.shape[0]
    cdef Py_ssize_t i, j, k, sweep
    cdef double frob = 0.0
    cdef double off, tol, apq, theta, t, c, s, x, y
    for i in range(p):
        for j in range(p):
            frob += a[i, j] * a[i, j]
    frob = sqrt(frob)
    if frob == 0.0:
        return 0
    if frob != frob:
        return 2
    tol = _J_TOL * frob
    for sweep in range(_N_SWEEPS):
        if _offdiag_norm(a) <= tol:
            return 0
        for i in range(p - 1):
            for j in range(i + 1, p):
                apq = a[i, j]
                if apq == 0.0:
                    continue
                theta = 0.5 * (a[j, j] - a[i, i]) / apq
                if theta == 0.0:
                    t = 1.0
                elif fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(1.0 + theta * theta))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for k in range(p):
                    x = a[i, k]
                    y = a[j, k]
                    a[i, k] = c * x - s * y
                    a[j, k] = s * x + c * y
                for k in range(p):
                    x = a[k, i]
                    y = a[k, j]
                    a[k, i] = c * x - s * y
                    a[k, j] = s * x + c * y
                a[i, j] = 0.0
                a[j, i] = 0.0
                if want_vectors:
                    for k in range(p):
                        x = v[k, i]
                        y = v[k, j]
                        v[k, i] = c * x - s * y
                        v[k, j] = s * x + c * y
    if _offdiag_norm(a) <= tol:
        return 0
    return 1


def jacobi_eigh(a):
    """Cyclic Jacobi eigendecomposition; values descending, vectors in columns."""
    a_arr = np.array(a, dtype=np.float64, order="C")
    cdef Py_ssize_t p = a_arr.shape[0]
    v_arr = np.eye(p)
    if p == 1:
        return np.array([a_arr[0, 0]]), v_arr
    cdef int status = _jacobi_core(a_arr, v_arr, 1)
    if status == 1:
        raise NoConvergence("jacobi sweep budget exhausted")
    if status == 2:
        raise NoConvergence("non-finite entries in eigen input")
    w = np.diagonal(a_arr).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(v_arr[:, order])


cdef Py_ssize_t _mgs_core(double[:, ::1] q, double[:, ::1] t, double scale) noexcept nogil:
    """Modified Gram-Schmidt, two passes. Returns 0 or 1 + failing column."""
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t p = q.shape[1]
    cdef Py_ssize_t i, j, rr, pass_
    cdef double r, norm
    for j in range(p):
        for pass_ in range(2):
            for i in range(j):
                r = 0.0
                for rr in range(n):
                    r += q[rr, i] * q[rr, j]
                t[i, j] += r
                for rr in range(n):
                    q[rr, j] -= r * q[rr, i]
        norm = 0.0
        for rr in range(n):
            norm += q[rr, j] * q[rr, j]
        norm = sqrt(norm)
        if norm <= _R_TOL * scale or norm != norm:
            return j + 1
        t[j, j] = norm
        for rr in range(n):
            q[rr, j] /= norm
    return 0


def mgs_qr(f):
    """Column-order modified Gram-Schmidt with one reorthogonalization pass.

    Returns (q, t) with q'q = I and f = q t, t upper triangular with positive
    diagonal. Raises RankDeficient on a numerically dependent column.
    """
    f_arr = np.array(f, dtype=np.float64, order="C")
    cdef Py_ssize_t n = f_arr.shape[0]
    cdef Py_ssize_t p = f_arr.shape[1]
    if p == 0 or n < p:
        raise RankDeficient(f"cannot orthonormalize {p} columns of length {n}")
    scale = float(np.sqrt((f_arr * f_arr).sum()))
    if scale == 0.0 or not np.isfinite(scale):
        raise RankDeficient("zero or non-finite input")
    q_arr = f_arr.copy()
    t_arr = np.zeros((p, p))
    cdef Py_ssize_t status = _mgs_core(q_arr, t_arr, scale)
    if status != 0:
        raise RankDeficient(f"column {status - 1} is numerically dependent on earlier columns")
    return q_arr, t_arr


cdef Py_ssize_t _chol_core(double[:, ::1] m, double[:, ::1] low) noexcept nogil:
    """Lower Cholesky factor into low. Returns 0 or 1 + failing column."""
    cdef Py_ssize_t p = m.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double d, acc
    for j in range(p):
        d = m[j, j]
        for k in range(j):
            d -= low[j, k] * low[j, k]
        if not d > _C_TOL:
            return j + 1
        d = sqrt(d)
        low[j, j] = d
        for i in range(j + 1, p):
            acc = m[i, j]
            for k in range(j):
                acc -= low[i, k] * low[j, k]
            low[i, j] = acc / d
    return 0


def chol_factor(m):
    """Lower Cholesky factor; raises NotPositiveDefinite on a failed pivot."""
    m_arr = np.array(m, dtype=np.float64, order="C")
    cdef Py_ssize_t p = m_arr.shape[0]
    low_arr = np.zeros((p, p))
    cdef Py_ssize_t status = _chol_core(m_arr, low_arr)
    if status != 0:
        raise NotPositiveDefinite(f"pivot failure at column {status - 1}")
    return low_arr


cdef void _solve_factored_core(double[:, ::1] low, double[:, ::1] b, double[:, ::1] x) noexcept nogil:
    """Solve (low low') x = b columnwise; b and x must not alias."""
    cdef Py_ssize_t p = low.shape[0]
    cdef Py_ssize_t m = b.shape[1]
    cdef Py_ssize_t i, k, c
    cdef double acc
    for c in range(m):
        for i in range(p):
            acc = b[i, c]
            for k in range(i):
                acc -= low[i, k] * x[k, c]
            x[i, c] = acc / low[i, i]
        for i in range(p - 1, -1, -1):
            acc = x[i, c]
            for k in range(i + 1, p):
                acc -= low[k, i] * x[k, c]
            x[i, c] = acc / low[i, i]


def chol_solve(m, b):
    """Solve m x = b for SPD m via Cholesky. b may be a vector or a matrix."""
    b_arr = np.array(b, dtype=np.float64, order="C")
    one_d = b_arr.ndim == 1
    if one_d:
        b_arr = np.ascontiguousarray(b_arr[:, None])
    low = chol_factor(m)
    x_arr = np.empty_like(b_arr)
    _solve_factored_core(low, b_arr, x_arr)
    return x_arr[:, 0] if one_d else x_arr


cdef double _trace_inv_core(double[:, ::1] low, double[:, ::1] z) noexcept nogil:
    """Trace of (low low')^{-1} via the Frobenius norm of low^{-1}."""
    cdef Py_ssize_t p = low.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc, total = 0.0
    for j in range(p):
        z[j, j] = 1.0 / low[j, j]
        for i in range(j + 1, p):
            acc = 0.0
            for k in range(j, i):
                acc -= low[i, k] * z[k, j]
            z[i, j] = acc / low[i, i]
        for i in range(j, p):
            total += z[i, j] * z[i, j]
    return total


cdef void _weighted_gram(const double[:, ::1] q, const double[::1] w, bint square, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t p = q.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double ww, qi
    for i in range(p):
        for j in range(p):
            out[i, j] = 0.0
    for r in range(n):
        ww = w[r] * w[r] if square else w[r]
        if ww == 0.0:
            continue
        for i in range(p):
            qi = ww * q[r, i]
            for j in range(p):
                out[i, j] += qi * q[r, j]


cdef int _chmax_core(double[:, ::1] low, double[:, ::1] s,
                     double[:, ::1] y, double[:, ::1] u, double* out) noexcept nogil:
    """Largest eigenvalue of R^{-1} S R^{-1} given low low' = R. Uses y, u as scratch."""
    cdef Py_ssize_t p = low.shape[0]
    cdef Py_ssize_t i, j
    cdef double best
    _solve_factored_core(low, s, y)
    for i in range(p):
        for j in range(p):
            u[i, j] = y[j, i]
    _solve_factored_core(low, u, y)
    for i in range(p):
        for j in range(p):
            u[i, j] = 0.5 * (y[i, j] + y[j, i])
    cdef int status = _jacobi_core(u, u, 0)
    if status != 0:
        return status
    best = u[0, 0]
    for i in range(1, p):
        if u[i, i] > best:
            best = u[i, i]
    out[0] = best
    return 0


def criterion_parts(q, w):
    """(trace of R^{-1}, largest eigenvalue of U) for weights w on basis q.

    R = q' diag(w) q and U = R^{-1} q' diag(w)^2 q R^{-1}. Raises
    NotPositiveDefinite when R has no Cholesky factorization.
    """
    q_arr = np.ascontiguousarray(q, dtype=np.float64)
    w_arr = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t p = q_arr.shape[1]
    r = np.empty((p, p))
    s = np.empty((p, p))
    low = np.zeros((p, p))
    y = np.empty((p, p))
    u = np.empty((p, p))
    z = np.zeros((p, p))
    cdef double chmax = 0.0
    cdef double tr
    cdef Py_ssize_t status
    _weighted_gram(q_arr, w_arr, 0, r)
    _weighted_gram(q_arr, w_arr, 1, s)
    status = _chol_core(r, low)
    if status != 0:
        raise NotPositiveDefinite(f"pivot failure at column {status - 1}")
    tr = _trace_inv_core(low, z)
    cdef int est = _chmax_core(low, s, y, u, &chmax)
    if est != 0:
        raise NoConvergence("jacobi sweep budget exhausted")
    return float(tr), float(chmax)


def t_values_exact(q, w, double k, double nu):
    """Exact one-point-addition improvements at virtual count k.

    For each candidate i the loss of the updated design (k w + e_i) / (k + 1)
    is recomputed exactly and t_i = k * (I_nu(current) - I_nu(updated)).
    Returns (t, trace_rinv, chmax_u, i_nu) where the last three describe the
    current design.
    """
    q_arr = np.ascontiguousarray(q, dtype=np.float64)
    w_arr = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = q_arr.shape[0]
    cdef Py_ssize_t p = q_arr.shape[1]
    r = np.empty((p, p))
    s = np.empty((p, p))
    low = np.zeros((p, p))
    z = np.zeros((p, p))
    ri = np.empty((p, p))
    si = np.empty((p, p))
    li = np.zeros((p, p))
    y = np.empty((p, p))
    u = np.empty((p, p))
    t_out = np.empty(n)
    cdef const double[:, ::1] qv = q_arr
    cdef const double[::1] wv = w_arr
    cdef double[:, ::1] rv = r
    cdef double[:, ::1] sv = s
    cdef double[:, ::1] lowv = low
    cdef double[:, ::1] zv = z
    cdef double[:, ::1] riv = ri
    cdef double[:, ::1] siv = si
    cdef double[:, ::1] liv = li
    cdef double[:, ::1] yv = y
    cdef double[:, ::1] uv = u
    cdef double[::1] tv = t_out
    cdef double tr0, ch0 = 0.0, i0, kp1, shrink, tri, chi, inew, coef
    cdef Py_ssize_t i, a, b, status
    cdef int est
    cdef bint failed = False
    _weighted_gram(qv, wv, 0, rv)
    _weighted_gram(qv, wv, 1, sv)
    status = _chol_core(rv, lowv)
    if status != 0:
        raise NotPositiveDefinite(f"pivot failure at column {status - 1}")
    tr0 = _trace_inv_core(lowv, zv)
    est = _chmax_core(lowv, sv, yv, uv, &ch0)
    if est != 0:
        raise NoConvergence("jacobi sweep budget exhausted")
    i0 = (1.0 - nu) * tr0 + nu * ch0
    kp1 = k + 1.0
    shrink = k / kp1
    with nogil:
        for i in range(n):
            for a in range(p):
                for b in range(p):
                    riv[a, b] = shrink * rv[a, b] + qv[i, a] * qv[i, b] / kp1
                    liv[a, b] = 0.0
                    zv[a, b] = 0.0
            status = _chol_core(riv, liv)
            if status != 0:
                failed = True
                break
            tri = _trace_inv_core(liv, zv)
            if nu != 0.0:
                coef = (2.0 * k * wv[i] + 1.0) / (kp1 * kp1)
                for a in range(p):
                    for b in range(p):
                        siv[a, b] = shrink * shrink * sv[a, b] + coef * qv[i, a] * qv[i, b]
                est = _chmax_core(liv, siv, yv, uv, &chi)
                if est != 0:
                    failed = True
                    break
                inew = (1.0 - nu) * tri + nu * chi
            else:
                inew = tri
            tv[i] = k * (i0 - inew)
    if failed:
        raise NotPositiveDefinite("candidate update lost positive definiteness")
    return t_out, float(tr0), float(ch0), float(i0)
