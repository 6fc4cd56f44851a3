"""Structured Sylvester solvers with one large tridiagonal factor.

Only the small dense coefficients are Schur-factorized (complex Schur form);
the large tridiagonal factor is handled column by column (matrix case) or
fiber by fiber (tensor case) with Thomas elimination, so the cost is linear
in the grid size.  All kernels accept a leading batch axis so that the
systems of every spatial point are solved in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np

from .fokker_planck import TridiagonalMatrix

PIVOT_TOL = 1e-300
_EPS = np.finfo(float).eps


class SchurConvergenceError(RuntimeError):
    """QR iteration did not converge within the sweep cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(np.linalg.LinAlgError):
    """A shifted tridiagonal system hit a pivot below ``PIVOT_TOL``."""


class Orientation(enum.Enum):
    BIG_FIRST = "BigFirst"
    BIG_SECOND = "BigSecond"


@dataclass(frozen=True, eq=False)
class SchurFactors:
    """``L = U W U^*`` with ``U`` unitary and ``W`` upper triangular (batched)."""

    U: np.ndarray
    W: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.U @ self.W @ np.conj(np.swapaxes(self.U, -1, -2))


@dataclass
class SolveStats:
    """Operation counts and diagnostics of one structured solve."""

    schur_sweeps: int = 0
    sweep_ops: int = 0
    transform_ops: int = 0
    max_imag: float = 0.0

    @property
    def total_ops(self) -> int:
        return self.sweep_ops + self.transform_ops


# --------------------------------------------------------------------------
# complex Schur decomposition (Householder Hessenberg + shifted QR)

@numba.njit(cache=True)
def _hessenberg(H, Q):
    n = H.shape[0]
    for k in range(n - 2):
        m = n - k - 1
        v = np.empty(m, dtype=np.complex128)
        tail = 0.0
        for i in range(m):
            v[i] = H[k + 1 + i, k]
            if i > 0:
                tail += abs(v[i]) ** 2
        if tail == 0.0:
            continue
        x0 = v[0]
        xnorm = np.sqrt(abs(x0) ** 2 + tail)
        phase = x0 / abs(x0) if abs(x0) > 0.0 else 1.0 + 0.0j
        v[0] = x0 + phase * xnorm
        vnorm = np.sqrt(abs(v[0]) ** 2 + tail)
        for i in range(m):
            v[i] /= vnorm
        # H <- (I - 2 v v^*) H (I - 2 v v^*)
        for j in range(n):
            s = 0.0j
            for i in range(m):
                s += np.conj(v[i]) * H[k + 1 + i, j]
            for i in range(m):
                H[k + 1 + i, j] -= 2.0 * v[i] * s
        for i in range(n):
            s = 0.0j
            for j in range(m):
                s += H[i, k + 1 + j] * v[j]
            for j in range(m):
                H[i, k + 1 + j] -= 2.0 * s * np.conj(v[j])
            s = 0.0j
            for j in range(m):
                s += Q[i, k + 1 + j] * v[j]
            for j in range(m):
                Q[i, k + 1 + j] -= 2.0 * s * np.conj(v[j])
        for i in range(k + 2, n):
            H[i, k] = 0.0


@numba.njit(cache=True)
def _givens(x, y):
    # returns (c, s) with [[c, s], [-conj(s), c]] @ [x, y] = [r, 0]
    ay = abs(y)
    if ay == 0.0:
        return 1.0, 0.0j
    ax = abs(x)
    if ax == 0.0:
        return 0.0, np.conj(y) / ay
    nrm = np.sqrt(ax * ax + ay * ay)
    return ax / nrm, (x / ax) * np.conj(y) / nrm


@numba.njit(cache=True)
def _schur_inplace(H, U, max_sweeps):
    """Reduce upper Hessenberg ``H`` to triangular form; returns (converged, sweeps)."""
    n = H.shape[0]
    hi = n - 1
    sweeps = 0
    its = 0
    anorm = 0.0
    for i in range(n):
        for j in range(n):
            anorm += abs(H[i, j])
    if anorm == 0.0:
        return True, 0
    while hi > 0:
        lo = hi
        while lo > 0:
            s = abs(H[lo, lo]) + abs(H[lo - 1, lo - 1])
            if s == 0.0:
                s = anorm
            if abs(H[lo, lo - 1]) <= _EPS * s:
                H[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            its = 0
            continue
        if sweeps >= max_sweeps:
            return False, sweeps
        a = H[hi - 1, hi - 1]
        b = H[hi - 1, hi]
        c = H[hi, hi - 1]
        d = H[hi, hi]
        if its > 0 and its % 10 == 0:
            mu = d + 0.75 * abs(c) * (1.0 + 0.5j)
        else:
            half = 0.5 * (a - d)
            disc = np.sqrt(half * half + b * c)
            mu1 = 0.5 * (a + d) + disc
            mu2 = 0.5 * (a + d) - disc
            mu = mu1 if abs(mu1 - d) <= abs(mu2 - d) else mu2
        x = H[lo, lo] - mu
        y = H[lo + 1, lo]
        for k in range(lo, hi):
            if k > lo:
                x = H[k, k - 1]
                y = H[k + 1, k - 1]
            cs, sn = _givens(x, y)
            start = k - 1 if k > lo else lo
            for j in range(start, n):
                t1 = H[k, j]
                t2 = H[k + 1, j]
                H[k, j] = cs * t1 + sn * t2
                H[k + 1, j] = -np.conj(sn) * t1 + cs * t2
            if k > lo:
                H[k + 1, k - 1] = 0.0
            stop = min(k + 2, hi)
            for i in range(stop + 1):
                t1 = H[i, k]
                t2 = H[i, k + 1]
                H[i, k] = cs * t1 + np.conj(sn) * t2
                H[i, k + 1] = -sn * t1 + cs * t2
            for i in range(n):
                t1 = U[i, k]
                t2 = U[i, k + 1]
                U[i, k] = cs * t1 + np.conj(sn) * t2
                U[i, k + 1] = -sn * t1 + cs * t2
        sweeps += 1
        its += 1
    return True, sweeps


@numba.njit(cache=True)
def _schur_one(A, max_sweeps):
    n = A.shape[0]
    H = A.astype(np.complex128)
    U = np.eye(n).astype(np.complex128)
    _hessenberg(H, U)
    conv, sweeps = _schur_inplace(H, U, max_sweeps)
    for i in range(n):
        for j in range(i):
            H[i, j] = 0.0
    return U, H, conv, sweeps


@numba.njit(cache=True)
def _schur_batch(A, max_sweeps):
    nb, n, _ = A.shape
    Us = np.zeros((nb, n, n), dtype=np.complex128)
    Ws = np.zeros((nb, n, n), dtype=np.complex128)
    ok = np.ones(nb, dtype=np.bool_)
    total = 0
    for b in range(nb):
        U, W, conv, sweeps = _schur_one(A[b], max_sweeps)
        total += sweeps
        ok[b] = conv
        Us[b] = U
        Ws[b] = W
    return Us, Ws, ok, total


def _schur_with_stats(L: np.ndarray) -> tuple[SchurFactors, int]:
    L = np.asarray(L)
    if L.ndim < 2 or L.shape[-1] != L.shape[-2]:
        raise ValueError("Schur factorization needs square matrices")
    if not np.all(np.isfinite(L)):
        raise ValueError("matrix has non-finite entries")
    n = L.shape[-1]
    batch = L.shape[:-2]
    flat = np.ascontiguousarray(L.reshape((-1, n, n)), dtype=np.complex128)
    U, W, ok, sweeps = _schur_batch(flat, 100 * n)
    factors = SchurFactors(U.reshape(batch + (n, n)), W.reshape(batch + (n, n)))
    if not np.all(ok):
        res = np.linalg.norm(factors.reconstruct() - L, axis=(-2, -1))
        raise SchurConvergenceError(
            f"QR iteration did not converge in {100 * n} sweeps; "
            f"reconstruction residual {float(np.max(res)):.3e}",
            float(np.max(res)),
        )
    return factors, int(sweeps)


def dense_schur(L: np.ndarray) -> SchurFactors:
    """Complex Schur factorization of small dense matrices (leading axes are batch axes)."""
    return _schur_with_stats(L)[0]


# --------------------------------------------------------------------------
# tridiagonal kernels

@numba.njit(cache=True)
def _thomas(lower, diag, upper, shift, rhs, out, work):
    # solves (A + shift I) x = rhs; lower[i] = A[i+1, i], upper[i] = A[i, i+1]
    n = diag.shape[0]
    piv = diag[0] + shift
    if abs(piv) < PIVOT_TOL:
        return 0
    work[0] = upper[0] / piv if n > 1 else 0.0
    out[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] + shift - lower[i - 1] * work[i - 1]
        if abs(piv) < PIVOT_TOL:
            return i
        if i < n - 1:
            work[i] = upper[i] / piv
        out[i] = (rhs[i] - lower[i - 1] * out[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        out[i] -= work[i] * out[i + 1]
    return -1


@numba.njit(cache=True)
def _thomas_batch(lower, diag, upper, shift, rhs):
    nb, n = rhs.shape
    out = np.zeros((nb, n), dtype=np.complex128)
    work = np.zeros(n, dtype=np.complex128)
    fail = np.full(nb, -1, dtype=np.int64)
    for b in range(nb):
        fail[b] = _thomas(lower[b], diag[b], upper[b], shift[b], rhs[b], out[b], work)
    return out, fail


@numba.njit(cache=True)
def _column_sweep_one(lower, diag, upper, W, E, Z, rhs, work):
    """``(A + W_jj I) Z_j = E_j - sum_{k<j} W_kj Z_k``; returns (failed column, op count)."""
    n, r = E.shape
    ops = 0
    col = np.empty(n, dtype=np.complex128)
    for j in range(r):
        for i in range(n):
            rhs[i] = E[i, j]
        for k in range(j):
            w = W[k, j]
            for i in range(n):
                rhs[i] -= w * Z[i, k]
        ops += n * j + 5 * n
        if _thomas(lower, diag, upper, W[j, j], rhs, col, work) >= 0:
            return j, ops
        for i in range(n):
            Z[i, j] = col[i]
    return -1, ops


@numba.njit(cache=True)
def _column_sweep(lower, diag, upper, W, E):
    nb, n, r = E.shape
    Z = np.zeros((nb, n, r), dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    work = np.empty(n, dtype=np.complex128)
    ops = 0
    for b in range(nb):
        bad, cnt = _column_sweep_one(lower[b], diag[b], upper[b], W[b], E[b], Z[b], rhs, work)
        ops += cnt
        if bad >= 0:
            return Z, b, bad, ops
    return Z, -1, -1, ops


@numba.njit(cache=True)
def _fiber_sweep_one(lower, diag, upper, W1, W3, E, Z, rhs, work):
    """Mode-2 fiber recursion in lexicographic (i, j) order; returns (i, j, op count)."""
    r1, n, r2 = E.shape
    ops = 0
    col = np.empty(n, dtype=np.complex128)
    for i in range(r1):
        for j in range(r2):
            for k in range(n):
                rhs[k] = E[i, k, j]
            for p in range(i):
                w = W1[p, i]
                for k in range(n):
                    rhs[k] -= w * Z[p, k, j]
            for q in range(j):
                w = W3[q, j]
                for k in range(n):
                    rhs[k] -= w * Z[i, k, q]
            ops += n * (i + j) + 5 * n
            if _thomas(lower, diag, upper, W1[i, i] + W3[j, j], rhs, col, work) >= 0:
                return i, j, ops
            for k in range(n):
                Z[i, k, j] = col[k]
    return -1, -1, ops


@numba.njit(cache=True)
def _fiber_sweep(lower, diag, upper, W1, W3, E):
    nb, r1, n, r2 = E.shape
    Z = np.zeros((nb, r1, n, r2), dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    work = np.empty(n, dtype=np.complex128)
    ops = 0
    for b in range(nb):
        bi, bj, cnt = _fiber_sweep_one(lower[b], diag[b], upper[b], W1[b], W3[b], E[b], Z[b], rhs, work)
        ops += cnt
        if bi >= 0:
            return Z, b, bi, bj, ops
    return Z, -1, -1, -1, ops


def _flat_bands(A: TridiagonalMatrix, batch: tuple[int, ...], transpose: bool):
    lower, upper = (A.sup, A.sub) if transpose else (A.sub, A.sup)
    n = A.n

    def prep(band, m):
        return np.ascontiguousarray(np.broadcast_to(band, batch + (m,)).reshape(-1, m), dtype=np.complex128)

    return prep(lower, n - 1), prep(A.diag, n), prep(upper, n - 1)


def thomas_solve(A: TridiagonalMatrix, rhs: np.ndarray, shift=0.0) -> np.ndarray:
    """Solve ``(A + shift I) x = rhs`` by Thomas elimination (no pivoting).

    ``rhs`` may carry leading batch axes matching those of ``A``.
    """
    rhs = np.asarray(rhs)
    n = A.n
    if rhs.shape[-1] != n:
        raise ValueError(f"rhs has length {rhs.shape[-1]}, matrix has {n} rows")
    batch = np.broadcast_shapes(rhs.shape[:-1], A.batch_shape)
    lower, diag, upper = _flat_bands(A, batch, transpose=False)
    s = np.ascontiguousarray(np.broadcast_to(np.asarray(shift, dtype=np.complex128), batch).reshape(-1))
    r = np.ascontiguousarray(np.broadcast_to(rhs, batch + (n,)).reshape(-1, n), dtype=np.complex128)
    x, fail = _thomas_batch(lower, diag, upper, s, r)
    if np.any(fail >= 0):
        b = int(np.argmax(fail >= 0))
        raise SingularSystemError(f"zero pivot at row {int(fail[b])} (batch entry {b}, shift {s[b]})")
    x = x.reshape(batch + (n,))
    if not (np.iscomplexobj(rhs) or np.iscomplexobj(shift) or np.iscomplexobj(A.diag)):
        return x.real.copy()
    return x


def _conj_t(U):
    return np.conj(np.swapaxes(U, -1, -2))


def solve_matrix_sylvester(
    L_big: TridiagonalMatrix,
    L_small: np.ndarray,
    R: np.ndarray,
    orientation: Orientation | str = Orientation.BIG_FIRST,
    return_stats: bool = False,
):
    """Solve ``L_big^T X + X L_small = R`` (BigFirst, ``X`` is Nv x r) or
    ``L_small^T X + X L_big = R`` (BigSecond, ``X`` is r x Nv).

    Leading axes of ``L_small`` and ``R`` (and of the bands of ``L_big``) are
    batch axes.  The real part of the back-transformed solution is returned.
    """
    orientation = Orientation(orientation) if not isinstance(orientation, Orientation) else orientation
    R = np.asarray(R, dtype=float)
    L_small = np.asarray(L_small, dtype=float)
    if orientation is Orientation.BIG_SECOND:
        R = np.swapaxes(R, -1, -2)
    n, r = R.shape[-2:]
    if L_big.n != n or L_small.shape[-2:] != (r, r):
        raise ValueError(f"shape mismatch: L_big {L_big.n}, L_small {L_small.shape[-2:]}, R {(n, r)}")
    batch = np.broadcast_shapes(R.shape[:-2], L_small.shape[:-2], L_big.batch_shape)
    schur, sweeps = _schur_with_stats(np.broadcast_to(L_small, batch + (r, r)))
    E = np.broadcast_to(R, batch + (n, r)) @ schur.U
    lower, diag, upper = _flat_bands(L_big, batch, transpose=True)
    Z, fb, fj, ops = _column_sweep(
        lower, diag, upper,
        np.ascontiguousarray(schur.W.reshape(-1, r, r)),
        np.ascontiguousarray(E.reshape(-1, n, r)),
    )
    if fb >= 0:
        w = schur.W.reshape(-1, r, r)[fb, fj, fj]
        raise SingularSystemError(
            f"shifted tridiagonal system singular for Schur eigenvalue {w} (column {fj}, batch entry {fb})"
        )
    Xc = Z.reshape(batch + (n, r)) @ _conj_t(schur.U)
    X = Xc.real.copy()
    if orientation is Orientation.BIG_SECOND:
        X = np.swapaxes(X, -1, -2)
    if not return_stats:
        return X
    nb = int(np.prod(batch, dtype=np.int64))
    stats = SolveStats(
        schur_sweeps=sweeps,
        sweep_ops=int(ops),
        transform_ops=2 * nb * n * r * r,
        max_imag=float(np.max(np.abs(Xc.imag), initial=0.0)),
    )
    return X, stats


def solve_tensor_sylvester(
    G: np.ndarray,
    T_mid: TridiagonalMatrix,
    H: np.ndarray,
    R: np.ndarray,
    return_stats: bool = False,
):
    """Solve ``X x_1 G + X x_2 T_mid + X x_3 H = R`` for ``X`` of shape (..., r1, Nv, r2)."""
    R = np.asarray(R, dtype=float)
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    r1, n, r2 = R.shape[-3:]
    if G.shape[-2:] != (r1, r1) or H.shape[-2:] != (r2, r2) or T_mid.n != n:
        raise ValueError("shape mismatch between G, T_mid, H and R")
    batch = np.broadcast_shapes(R.shape[:-3], G.shape[:-2], H.shape[:-2], T_mid.batch_shape)
    s1, sw1 = _schur_with_stats(np.broadcast_to(G, batch + (r1, r1)))
    s3, sw3 = _schur_with_stats(np.broadcast_to(H, batch + (r2, r2)))
    # E = (R x_1 U1) x_3 U3
    Rb = np.broadcast_to(R, batch + (r1, n, r2)).reshape(batch + (r1, n * r2))
    E = (np.swapaxes(s1.U, -1, -2) @ Rb).reshape(batch + (r1 * n, r2)) @ s3.U
    lower, diag, upper = _flat_bands(T_mid, batch, transpose=True)
    Z, fb, fi, fj, ops = _fiber_sweep(
        lower, diag, upper,
        np.ascontiguousarray(s1.W.reshape(-1, r1, r1)),
        np.ascontiguousarray(s3.W.reshape(-1, r2, r2)),
        np.ascontiguousarray(E.reshape(-1, r1, n, r2)),
    )
    if fb >= 0:
        shift = s1.W.reshape(-1, r1, r1)[fb, fi, fi] + s3.W.reshape(-1, r2, r2)[fb, fj, fj]
        raise SingularSystemError(f"fiber ({fi}, {fj}) singular for shift {shift} (batch entry {fb})")
    Z = Z.reshape(batch + (r1, n * r2))
    Xc = (np.conj(s1.U) @ Z).reshape(batch + (r1 * n, r2)) @ _conj_t(s3.U)
    Xc = Xc.reshape(batch + (r1, n, r2))
    X = Xc.real.copy()
    if not return_stats:
        return X
    nb = int(np.prod(batch, dtype=np.int64))
    stats = SolveStats(
        schur_sweeps=sw1 + sw3,
        sweep_ops=int(ops),
        transform_ops=2 * nb * n * r1 * r2 * (r1 + r2),
        max_imag=float(np.max(np.abs(Xc.imag), initial=0.0)),
    )
    return X, stats
