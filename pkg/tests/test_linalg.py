import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import spd
from sketchsel.errors import ModelError, NumericError
from sketchsel.linalg import (as_matrix, cholesky, inv_sqrt_spd, numerical_rank, pinv, solve_spd,
                              sqrt_psd, svd_jacobi, sym_eig)


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ModelError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(ModelError):
        as_matrix(np.ones((2, 2, 2)))
    assert as_matrix(np.ones(3)).shape == (3, 1)


def test_sym_eig_diagonal(jit):
    res = sym_eig(np.diag([2.0, 3.0]), jit=jit)
    np.testing.assert_array_equal(res.values, [3.0, 2.0])
    np.testing.assert_array_equal(res.vectors, [[0.0, 1.0], [1.0, 0.0]])


def test_sym_eig_path_graph(jit):
    res = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]), jit=jit)
    np.testing.assert_allclose(res.values, [1.0, -1.0], atol=1e-15)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(res.vectors, [[s, s], [s, -s]], atol=1e-15)


def test_sym_eig_random_seed7(jit):
    gen = np.random.default_rng(7)
    A = gen.standard_normal((8, 8))
    A = A + A.T
    res = sym_eig(A, jit=jit)
    V, w = res.vectors, res.values
    assert np.abs(V @ np.diag(w) @ V.T - A).max() <= 1e-9
    np.testing.assert_allclose(w, np.linalg.eigvalsh(A)[::-1], atol=1e-12)
    assert np.all(np.diff(w) <= 0)


@pytest.mark.parametrize("n", [1, 5, 40, 128])
def test_sym_eig_invariants(n, jit):
    gen = np.random.default_rng(n)
    A = gen.standard_normal((n, n))
    A = (A + A.T) / 2
    V, w = sym_eig(A, jit=jit).vectors, sym_eig(A, jit=jit).values
    assert np.abs(V.T @ V - np.eye(n)).max() <= 1e-10 * n
    assert np.abs(A @ V - V * w).max() <= 1e-8 * np.abs(A).max()
    # sign rule: the largest-magnitude entry of each vector is positive
    lead = V[np.argmax(np.abs(V), axis=0), np.arange(n)]
    assert np.all(lead > 0)


@pytest.mark.slow
def test_sym_eig_n512():
    gen = np.random.default_rng(512)
    A = gen.standard_normal((512, 512))
    A = (A + A.T) / 2
    res = sym_eig(A)
    assert np.abs(res.vectors.T @ res.vectors - np.eye(512)).max() <= 1e-10 * 512
    assert np.abs(A @ res.vectors - res.vectors * res.values).max() <= 1e-8 * np.abs(A).max()


def test_sym_eig_deterministic():
    A = spd(np.random.default_rng(1), 20)
    a, b = sym_eig(A), sym_eig(A.copy())
    assert a.values.tobytes() == b.values.tobytes()
    assert a.vectors.tobytes() == b.vectors.tobytes()


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ModelError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ModelError):
        sym_eig(np.ones((2, 3)))


def test_solve_spd_examples(jit):
    np.testing.assert_allclose(solve_spd(2 * np.eye(2), np.eye(2), jit=jit), 0.5 * np.eye(2), atol=1e-15)
    B = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_allclose(solve_spd(np.eye(4), B, jit=jit), B, rtol=0, atol=0)


def test_solve_spd_residual_seed3(jit):
    gen = np.random.default_rng(3)
    A0 = gen.standard_normal((6, 6))
    A = A0.T @ A0 + np.eye(6)
    B = gen.standard_normal((6, 4))
    X = solve_spd(A, B, jit=jit)
    assert np.abs(A @ X - B).max() <= 1e-10 * np.abs(B).max()
    np.testing.assert_allclose(X, pinv(A) @ B, atol=1e-8)
    x = solve_spd(A, B[:, 0], jit=jit)
    assert x.shape == (6,)


def test_cholesky_names_pivot(jit):
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    with pytest.raises(NumericError, match="pivot 2"):
        cholesky(A, jit=jit)
    with pytest.raises(NumericError):
        solve_spd(-np.eye(2), np.eye(2), jit=jit)


def test_inv_sqrt_examples():
    np.testing.assert_allclose(inv_sqrt_spd(4 * np.eye(2)), 0.5 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(inv_sqrt_spd(np.diag([1.0, 9.0])), np.diag([1.0, 1 / 3]), atol=1e-15)
    A = spd(np.random.default_rng(5), 5)
    M = inv_sqrt_spd(A)
    assert np.abs(M @ A @ M - np.eye(5)).max() <= 1e-8
    assert np.array_equal(M, M.T)
    Minv2 = np.linalg.inv(M @ M)
    assert np.linalg.norm(Minv2 - A) <= 1e-7 * np.linalg.norm(A)
    with pytest.raises(NumericError):
        inv_sqrt_spd(np.diag([1.0, 0.0]))


def test_sqrt_psd_squares_back():
    A = spd(np.random.default_rng(2), 6, ridge=0.0)
    S = sqrt_psd(A)
    np.testing.assert_allclose(S @ S, A, atol=1e-12)


def test_pinv_examples():
    np.testing.assert_allclose(pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]), atol=1e-16)
    np.testing.assert_allclose(pinv(np.array([[1.0], [1.0]])), [[0.5, 0.5]], atol=1e-16)


def _penrose(A, P, tol):
    assert np.abs(A @ P @ A - A).max() <= tol
    assert np.abs(P @ A @ P - P).max() <= tol
    assert np.abs(A @ P - (A @ P).T).max() <= tol
    assert np.abs(P @ A - (P @ A).T).max() <= tol


def test_pinv_rank3_penrose():
    gen = np.random.default_rng(11)
    A = gen.standard_normal((4, 3)) @ gen.standard_normal((3, 6))
    P = pinv(A)
    _penrose(A, P, 1e-8)
    np.testing.assert_allclose(P, np.linalg.pinv(A), atol=1e-10)
    _penrose(A.T, pinv(A.T), 1e-8)


@settings(max_examples=40, deadline=None)
@given(r=st.integers(1, 7), c=st.integers(1, 7), seed=st.integers(0, 2**31))
def test_pinv_matches_lapack(r, c, seed):
    A = np.random.default_rng(seed).standard_normal((r, c))
    np.testing.assert_allclose(pinv(A), np.linalg.pinv(A), atol=1e-9)


def test_pinv_ill_conditioned_keeps_accuracy():
    # singular values 1 .. 1e-9: squaring them explicitly would lose the small ones
    gen = np.random.default_rng(4)
    U, _ = np.linalg.qr(gen.standard_normal((12, 5)))
    V, _ = np.linalg.qr(gen.standard_normal((5, 5)))
    s = np.logspace(0, -9, 5)
    A = (U * s) @ V.T
    P = pinv(A)
    assert np.linalg.norm(P @ A - np.eye(5)) <= 1e-5
    assert numerical_rank(A) == 5


def test_svd_jacobi_parity(jit):
    A = np.random.default_rng(8).standard_normal((9, 6))
    U, s, V = svd_jacobi(A, jit=jit)
    np.testing.assert_allclose((U * s) @ V.T, A, atol=1e-13)
    np.testing.assert_allclose(s, np.linalg.svd(A, compute_uv=False), rtol=1e-13)


def test_numerical_rank():
    gen = np.random.default_rng(9)
    A = gen.standard_normal((7, 2)) @ gen.standard_normal((2, 5))
    assert numerical_rank(A) == 2
    assert numerical_rank(np.zeros((3, 3))) == 0
