"""Kernel-level linear algebra checks against independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdesign import _kernels_py as kpy
from mmdesign import numerics
from mmdesign._backend import backend_name, kernels
from mmdesign.exceptions import NoConvergence, NotPositiveDefinite, RankDeficient

from _oracles import classical_gram_schmidt, eig_by_charpoly


def test_orthonormal_basis_identity_passthrough():
    q, t = numerics.orthonormal_basis(np.eye(3))
    assert np.array_equal(q, np.eye(3))
    assert np.array_equal(t, np.eye(3))


def test_orthonormal_basis_matches_classical_gram_schmidt():
    x = np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])
    f = np.vander(x, 2, increasing=True)
    q, t = numerics.orthonormal_basis(f)
    q_ref, t_ref = classical_gram_schmidt(f)
    assert np.max(np.abs(q - q_ref)) < 1e-12
    assert np.max(np.abs(t - t_ref)) < 1e-12


def test_orthonormal_basis_postconditions():
    rng = np.random.default_rng(42)
    for _ in range(40):
        p = int(rng.integers(1, 7))
        n = int(rng.integers(p, p + 15))
        f = rng.normal(size=(n, p))
        q, t = numerics.orthonormal_basis(f)
        assert np.max(np.abs(q.T @ q - np.eye(p))) < 1e-12
        scale = np.linalg.norm(f)
        assert np.max(np.abs(q @ t - f)) < 1e-12 * scale
        assert np.allclose(t, np.triu(t))
        assert np.all(np.diagonal(t) > 0)


def test_orthonormal_basis_rank_deficient():
    f = np.ones((5, 2))
    with pytest.raises(RankDeficient):
        numerics.orthonormal_basis(f)
    with pytest.raises(RankDeficient):
        numerics.orthonormal_basis(np.ones((2, 3)))


def test_sym_eigen_diagonal_input_sorted():
    res = numerics.sym_eigen(np.diag([3.0, 1.0, 2.0]))
    assert np.array_equal(res.values, np.array([3.0, 2.0, 1.0]))
    expect = np.zeros((3, 3))
    expect[0, 0] = 1.0
    expect[2, 1] = 1.0
    expect[1, 2] = 1.0
    assert np.max(np.abs(np.abs(res.vectors) - expect)) < 1e-15


def test_sym_eigen_matches_charpoly_bisection():
    rng = np.random.default_rng(2024)
    m = rng.normal(size=(6, 6))
    m = m + m.T
    res = numerics.sym_eigen(m)
    ref = eig_by_charpoly(m)
    assert np.max(np.abs(res.values - ref)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=7), st.integers(min_value=0, max_value=2**31 - 1))
def test_sym_eigen_reconstruction(p, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(p, p)) * 10.0 ** rng.integers(-3, 4)
    m = m + m.T
    res = numerics.sym_eigen(m)
    scale = 1.0 + np.linalg.norm(m)
    assert np.linalg.norm(res.vectors @ np.diag(res.values) @ res.vectors.T - m) <= 1e-9 * scale
    assert np.max(np.abs(res.vectors.T @ res.vectors - np.eye(p))) < 1e-10
    assert np.all(np.diff(res.values) <= 1e-12 * scale)


def test_sym_eigen_rejects_asymmetric():
    with pytest.raises(ValueError):
        numerics.sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eigen_rejects_nonfinite():
    with pytest.raises(ValueError):
        numerics.sym_eigen(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    # kernel-level contract: NaN reaching the sweep loop raises NoConvergence
    with pytest.raises(NoConvergence):
        kpy.jacobi_eigh(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_solve_spd_identity():
    b = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(numerics.solve_spd(np.eye(3), b), b)


def test_solve_spd_residual_bound():
    rng = np.random.default_rng(5)
    for _ in range(30):
        p = int(rng.integers(1, 7))
        a = rng.normal(size=(p, p))
        m = a @ a.T + 0.5 * np.eye(p)
        b = rng.normal(size=(p, int(rng.integers(1, 4))))
        x = numerics.solve_spd(m, b)
        resid = np.linalg.norm(m @ x - b)
        bound = 1e-10 * (np.linalg.norm(m) * np.linalg.norm(x) + np.linalg.norm(b))
        assert resid <= bound
        assert np.allclose(x, np.linalg.solve(m, b), atol=1e-9)


def test_solve_spd_vector_rhs_shape():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 4))
    m = a @ a.T + np.eye(4)
    b = rng.normal(size=4)
    x = numerics.solve_spd(m, b)
    assert x.shape == (4,)


def test_solve_spd_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        numerics.solve_spd(np.diag([1.0, -1.0]), np.ones(2))
    with pytest.raises(NotPositiveDefinite):
        numerics.solve_spd(np.diag([1.0, 1e-13]), np.ones(2))


def test_backend_parity_on_random_inputs():
    if backend_name() != "compiled":
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(99)
    for _ in range(60):
        p = int(rng.integers(1, 7))
        n = int(rng.integers(p, p + 12))
        f = rng.normal(size=(n, p))
        sym = rng.normal(size=(p, p))
        sym = sym + sym.T
        w1, v1 = kernels.jacobi_eigh(sym)
        w2, v2 = kpy.jacobi_eigh(sym)
        assert np.allclose(w1, w2, atol=1e-12)
        assert np.allclose(v1 @ np.diag(w1) @ v1.T, sym, atol=1e-10)
        assert np.allclose(v2 @ np.diag(w2) @ v2.T, sym, atol=1e-10)
        q1, t1 = kernels.mgs_qr(f)
        q2, t2 = kpy.mgs_qr(f)
        assert np.allclose(q1, q2, atol=1e-13)
        assert np.allclose(t1, t2, atol=1e-13)
        wts = rng.dirichlet(np.ones(n))
        assert np.allclose(kernels.criterion_parts(q1, wts), kpy.criterion_parts(q1, wts), rtol=1e-10)
        out1 = kernels.t_values_exact(q1, wts, 30.0, 0.5)
        out2 = kpy.t_values_exact(q1, wts, 30.0, 0.5)
        assert np.allclose(out1[0], out2[0], rtol=1e-9, atol=1e-11)
        assert np.allclose(out1[1:], out2[1:], rtol=1e-10)
