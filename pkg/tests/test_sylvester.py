import numpy as np
import pytest
from conftest import rel
from hypothesis import given
from hypothesis import strategies as st

from imex_tt.fokker_planck import TridiagonalMatrix
from imex_tt.oracle import dense_kronecker_solve
from imex_tt.sylvester import (
    Orientation,
    SingularSystemError,
    dense_schur,
    solve_matrix_sylvester,
    solve_tensor_sylvester,
    thomas_solve,
)


def _diag_dominant(rng, n, batch=()):
    sub = rng.standard_normal(batch + (n - 1,))
    sup = rng.standard_normal(batch + (n - 1,))
    diag = 5.0 + np.abs(rng.standard_normal(batch + (n,)))
    return TridiagonalMatrix(sub, diag, sup)


def _well_posed_small(rng, r, batch=()):
    # eigenvalues with positive real part so that shifts never cancel the big operator
    return np.eye(r) * 2.0 + 0.5 * rng.standard_normal(batch + (r, r))


# Schur ------------------------------------------------------------------------

def test_schur_of_diagonal():
    s = dense_schur(np.diag([2.0, 5.0]))
    assert sorted(np.diag(s.W).real) == [2.0, 5.0]
    assert abs(s.W[0, 1]) < 1e-15 and abs(s.W[1, 0]) == 0.0


def test_schur_of_rotation():
    s = dense_schur(np.array([[0.0, -1.0], [1.0, 0.0]]))
    w = np.sort_complex(np.diag(s.W))
    assert np.allclose(w, [-1j, 1j], atol=1e-14)


def test_schur_random_against_characteristic_roots(rng):
    L = rng.standard_normal((5, 5))
    s = dense_schur(L)
    assert np.linalg.norm(s.reconstruct() - L) <= 1e-10 * np.linalg.norm(L)
    assert np.allclose(np.tril(s.W, -1), 0.0)
    assert np.allclose(s.U.conj().T @ s.U, np.eye(5), atol=1e-13)
    # multiset comparison by nearest-root matching
    remaining = list(np.roots(np.poly(L)))
    for w in np.diag(s.W):
        k = int(np.argmin([abs(w - z) for z in remaining]))
        assert abs(w - remaining.pop(k)) < 1e-8


@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_schur_reconstructs(r, seed):
    L = np.random.default_rng(seed).standard_normal((3, r, r))
    s = dense_schur(L)
    assert np.max(np.abs(s.reconstruct() - L)) <= 1e-10 * max(1.0, np.max(np.abs(L)))


# Thomas ------------------------------------------------------------------------

def test_thomas_identity(rng):
    r = rng.standard_normal(6)
    A = TridiagonalMatrix(np.zeros(5), np.ones(6), np.zeros(5))
    assert np.array_equal(thomas_solve(A, r), r)


def test_thomas_small_system():
    A = TridiagonalMatrix(np.array([1.0, 1.0]), np.array([2.0, 2.0, 2.0]), np.array([1.0, 1.0]))
    assert np.allclose(thomas_solve(A, np.array([1.0, 0.0, 1.0])), [1.0, -1.0, 1.0], rtol=1e-15, atol=1e-15)


def test_thomas_complex_shift():
    A = TridiagonalMatrix(np.zeros(3), np.zeros(4), np.zeros(3))
    r = np.array([1.0, 2.0, -1.0, 0.5])
    assert np.allclose(thomas_solve(A, r, shift=1j), -1j * r, atol=1e-15)


def test_thomas_zero_pivot():
    A = TridiagonalMatrix(np.zeros(2), np.zeros(3), np.zeros(2))
    with pytest.raises(SingularSystemError):
        thomas_solve(A, np.ones(3))


@given(st.integers(2, 64), st.integers(0, 2 ** 31 - 1))
def test_thomas_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    A = _diag_dominant(rng, n)
    b = rng.standard_normal(n)
    assert rel(thomas_solve(A, b), np.linalg.solve(A.to_dense(), b)) < 1e-12


# matrix Sylvester ------------------------------------------------------------------

def test_matrix_identity_case(rng):
    R = rng.standard_normal((6, 3))
    A = TridiagonalMatrix(np.zeros(5), np.ones(6), np.zeros(5))
    assert np.allclose(solve_matrix_sylvester(A, np.zeros((3, 3)), R), R, atol=1e-15)


def test_matrix_diagonal_case(rng):
    d = rng.uniform(1, 2, 6)
    e = rng.uniform(1, 2, 3)
    R = rng.standard_normal((6, 3))
    A = TridiagonalMatrix(np.zeros(5), d, np.zeros(5))
    X = solve_matrix_sylvester(A, np.diag(e), R)
    assert np.allclose(X, R / (d[:, None] + e[None, :]), rtol=1e-14)


def test_matrix_random_against_kronecker(rng):
    A = _diag_dominant(rng, 8)
    L = _well_posed_small(rng, 3)
    R = rng.standard_normal((8, 3))
    X = solve_matrix_sylvester(A, L, R)
    assert rel(X, dense_kronecker_solve(A, L, R=R)) < 1e-10


def test_matrix_big_second_orientation(rng):
    A = _diag_dominant(rng, 7)
    L = _well_posed_small(rng, 2)
    R = rng.standard_normal((2, 7))
    X = solve_matrix_sylvester(A, L, R, Orientation.BIG_SECOND)
    assert X.shape == (2, 7)
    resid = L.T @ X + X @ A.to_dense()
    assert rel(resid, R) < 1e-12
    assert np.allclose(solve_matrix_sylvester(A, L, R, "BigSecond"), X)


def test_matrix_batched(rng):
    A = _diag_dominant(rng, 6, batch=(4,))
    L = _well_posed_small(rng, 3, batch=(4,))
    R = rng.standard_normal((4, 6, 3))
    X, stats = solve_matrix_sylvester(A, L, R, return_stats=True)
    for b in range(4):
        assert rel(X[b], dense_kronecker_solve(A[b], L[b], R=R[b])) < 1e-10
    assert stats.sweep_ops > 0 and stats.max_imag < 1e-10


def test_matrix_shape_mismatch(rng):
    A = _diag_dominant(rng, 6)
    with pytest.raises(ValueError):
        solve_matrix_sylvester(A, np.eye(3), np.ones((5, 3)))


def test_matrix_singular_shift():
    # A = 0 and L = 0: every shifted column system is singular
    A = TridiagonalMatrix(np.zeros(3), np.zeros(4), np.zeros(3))
    with pytest.raises(SingularSystemError):
        solve_matrix_sylvester(A, np.zeros((2, 2)), np.ones((4, 2)))


@given(st.integers(2, 64), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_matrix_residual_property(n, r, seed):
    rng = np.random.default_rng(seed)
    A = _diag_dominant(rng, n)
    L = _well_posed_small(rng, r)
    R = rng.standard_normal((n, r))
    X = solve_matrix_sylvester(A, L, R)
    resid = A.to_dense().T @ X + X @ L - R
    assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(R)


# tensor Sylvester ------------------------------------------------------------------

def test_tensor_decoupled_fibers(rng):
    T = _diag_dominant(rng, 6)
    R = rng.standard_normal((2, 6, 3))
    X = solve_tensor_sylvester(np.zeros((2, 2)), T, np.zeros((3, 3)), R)
    for i in range(2):
        for j in range(3):
            assert np.allclose(X[i, :, j], thomas_solve(T.transpose(), R[i, :, j]), rtol=1e-13)


def test_tensor_diagonal_case(rng):
    g = rng.uniform(1, 2, 2)
    h = rng.uniform(1, 2, 3)
    R = rng.standard_normal((2, 5, 3))
    zero = TridiagonalMatrix(np.zeros(4), np.zeros(5), np.zeros(4))
    X = solve_tensor_sylvester(np.diag(g), zero, np.diag(h), R)
    assert np.allclose(X, R / (g[:, None, None] + h[None, None, :]), rtol=1e-14)


def test_tensor_random_against_kronecker(rng):
    G = _well_posed_small(rng, 3)
    H = _well_posed_small(rng, 2)
    T = _diag_dominant(rng, 8)
    R = rng.standard_normal((3, 8, 2))
    X = solve_tensor_sylvester(G, T, H, R)
    assert rel(X, dense_kronecker_solve(G, T, H, R=R)) < 1e-10


def test_tensor_batched_with_stats(rng):
    G = _well_posed_small(rng, 2, batch=(3,))
    H = _well_posed_small(rng, 2, batch=(3,))
    T = _diag_dominant(rng, 5, batch=(3,))
    R = rng.standard_normal((3, 2, 5, 2))
    X, stats = solve_tensor_sylvester(G, T, H, R, return_stats=True)
    for b in range(3):
        assert rel(X[b], dense_kronecker_solve(G[b], T[b], H[b], R=R[b])) < 1e-10
    assert stats.total_ops > 0


def test_tensor_shape_mismatch(rng):
    with pytest.raises(ValueError):
        solve_tensor_sylvester(np.eye(2), _diag_dominant(rng, 5), np.eye(3), np.ones((2, 5, 2)))


@given(st.integers(1, 4), st.integers(2, 8), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_tensor_residual_property(r1, n, r2, seed):
    rng = np.random.default_rng(seed)
    G, H = _well_posed_small(rng, r1), _well_posed_small(rng, r2)
    T = _diag_dominant(rng, n)
    R = rng.standard_normal((r1, n, r2))
    X = solve_tensor_sylvester(G, T, H, R)
    resid = (np.einsum("akb,ac->ckb", X, G) + np.einsum("akb,kl->alb", X, T.to_dense())
             + np.einsum("akb,bc->akc", X, H) - R)
    assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(R)
