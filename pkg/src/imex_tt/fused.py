"""Compiled time step for spatially homogeneous (collision-only) problems.

Without transport the right-hand side of every forward substep is the current
iterate itself, so its projections reduce to the current cores and the whole
five-substep sweep only involves small Galerkin matrices, one or two Schur
factorizations and tridiagonal sweeps.  This module runs that sweep point by
point inside a single compiled kernel.  It performs the same arithmetic as
:func:`imex_tt.integrator.projector_splitting_sweep` (up to rounding) while
avoiding the per-call overhead of the batched array code, which dominates
when there is only one spatial point.
"""

from __future__ import annotations

import numba
import numpy as np

from .sylvester import _column_sweep_one, _fiber_sweep_one, _schur_one

# status codes returned by the kernel: (code, stage, point)
OK = 0
SCHUR_FAILED = 1
SINGULAR = 2


@numba.njit(cache=True)
def _at_apply(sub, diag, sup, x, out):
    # out = A^T x
    n = x.shape[0]
    for k in range(n):
        s = diag[k] * x[k]
        if k > 0:
            s += sup[k - 1] * x[k - 1]
        if k < n - 1:
            s += sub[k] * x[k + 1]
        out[k] = s


@numba.njit(cache=True)
def _a_apply(sub, diag, sup, x, out):
    # out = A x
    n = x.shape[0]
    for i in range(n):
        s = diag[i] * x[i]
        if i > 0:
            s += sub[i - 1] * x[i - 1]
        if i < n - 1:
            s += sup[i] * x[i + 1]
        out[i] = s


@numba.njit(cache=True)
def _at_mid(sub, diag, sup, X):
    # A^T applied along the middle axis of an (r1, Nv, r2) core
    r1, n, r2 = X.shape
    out = np.empty_like(X)
    x = np.empty(n)
    y = np.empty(n)
    for a in range(r1):
        for b in range(r2):
            for k in range(n):
                x[k] = X[a, k, b]
            _at_apply(sub, diag, sup, x, y)
            for k in range(n):
                out[a, k, b] = y[k]
    return out


@numba.njit(cache=True)
def _left_sandwich(sub, diag, sup, p1):
    # P1^T A P1
    n, r = p1.shape
    ap = np.empty((n, r))
    x = np.empty(n)
    y = np.empty(n)
    for a in range(r):
        for k in range(n):
            x[k] = p1[k, a]
        _a_apply(sub, diag, sup, x, y)
        for k in range(n):
            ap[k, a] = y[k]
    return p1.T @ ap


@numba.njit(cache=True)
def _right_sandwich(sub, diag, sup, q3):
    # Q3 A Q3^T
    r, n = q3.shape
    qa = np.empty((r, n))
    for b in range(r):
        _at_apply(sub, diag, sup, q3[b], qa[b])
    return qa @ q3.T


@numba.njit(cache=True)
def _h_stage1(sub2, diag2, sup2, q2):
    # sum_{k,c} (Q2 x_2 A)(b,k,c) Q2(a,k,c)
    r1, n, r2 = q2.shape
    q2f = np.ascontiguousarray(q2).reshape(r1, n * r2)
    t2 = _at_mid(sub2, diag2, sup2, q2).reshape(r1, n * r2)
    return t2 @ q2f.T


@numba.njit(cache=True)
def _core2_sandwich(q2, m3):
    r1, n, r2 = q2.shape
    q2f = np.ascontiguousarray(q2).reshape(r1, n * r2)
    q2m = (np.ascontiguousarray(q2).reshape(r1 * n, r2) @ m3).reshape(r1, n * r2)
    return q2m @ q2f.T


@numba.njit(cache=True)
def _g_stage5(g1, sub2, diag2, sup2, p2):
    r1, n, r2 = p2.shape
    p2c = np.ascontiguousarray(p2)
    tmp = (g1.T @ p2c.reshape(r1, n * r2)).reshape(r1 * n, r2)
    g = tmp.T @ p2c.reshape(r1 * n, r2)
    t2 = _at_mid(sub2, diag2, sup2, p2c).reshape(r1 * n, r2)
    return g + t2.T @ p2c.reshape(r1 * n, r2)


@numba.njit(cache=True)
def _qr_pos(A):
    Q, R = np.linalg.qr(A)
    for j in range(R.shape[0]):
        if R[j, j] < 0.0:
            for i in range(Q.shape[0]):
                Q[i, j] = -Q[i, j]
            for i in range(R.shape[1]):
                R[j, i] = -R[j, i]
    return np.ascontiguousarray(Q), np.ascontiguousarray(R)


@numba.njit(cache=True)
def _solve_big_first(sub, diag, sup, L_small, R, max_sweeps):
    """``A^T X + X L_small = R`` for a tridiagonal ``A``; returns (X, status)."""
    n, r = R.shape
    U, W, conv, _ = _schur_one(L_small, max_sweeps)
    if not conv:
        return np.zeros((n, r)), SCHUR_FAILED
    E = R.astype(np.complex128) @ U
    Z = np.zeros((n, r), dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    work = np.empty(n, dtype=np.complex128)
    bad, _ = _column_sweep_one(sup.astype(np.complex128), diag.astype(np.complex128),
                               sub.astype(np.complex128), W, E, Z, rhs, work)
    if bad >= 0:
        return np.zeros((n, r)), SINGULAR
    return np.real(Z @ np.conj(U).T), OK


@numba.njit(cache=True)
def _step_point(c1, q2, q3, jsub, jdiag, jsup, dt, eta):
    nv, r1 = c1.shape
    r2 = q3.shape[0]
    h = dt * eta
    tsub = -h * jsub
    tdiag = 1.0 / 3.0 - h * jdiag
    tsup = -h * jsup
    sweeps1 = 100 * r1
    sweeps2 = 100 * r2

    # substep 1: T1^T C + C H_I = C1
    m3 = _right_sandwich(tsub[2], tdiag[2], tsup[2], q3)
    H = _h_stage1(tsub[1], tdiag[1], tsup[1], q2) + _core2_sandwich(q2, m3)
    C, st = _solve_big_first(tsub[0], tdiag[0], tsup[0], H, c1, sweeps1)
    if st != OK:
        return c1, q2, q3, st, 1
    p1, s1 = _qr_pos(C)

    # substep 2: S <- S - dt eta (G1J^T S + S (H2J + H3J))
    g1j = _left_sandwich(jsub[0], jdiag[0], jsup[0], p1)
    hj = _h_stage1(jsub[1], jdiag[1], jsup[1], q2)
    hj = hj + _core2_sandwich(q2, _right_sandwich(jsub[2], jdiag[2], jsup[2], q3))
    s1 = s1 - h * (g1j.T @ s1 + s1 @ hj)
    c2 = (s1 @ np.ascontiguousarray(q2).reshape(r1, nv * r2)).reshape(r1, nv, r2)

    # substep 3: C x_1 G + C x_2 T2 + C x_3 H = C2
    G = _left_sandwich(tsub[0], tdiag[0], tsup[0], p1)
    U1, W1, ok1, _ = _schur_one(G, sweeps1)
    U3, W3, ok3, _ = _schur_one(m3, sweeps2)
    if not (ok1 and ok3):
        return c1, q2, q3, SCHUR_FAILED, 3
    E = (U1.T @ c2.reshape(r1, nv * r2).astype(np.complex128)).reshape(r1 * nv, r2) @ U3
    Z = np.zeros((r1, nv, r2), dtype=np.complex128)
    rhs = np.empty(nv, dtype=np.complex128)
    work = np.empty(nv, dtype=np.complex128)
    bi, _, _ = _fiber_sweep_one(tsup[1].astype(np.complex128), tdiag[1].astype(np.complex128),
                                tsub[1].astype(np.complex128), W1, W3, E.reshape(r1, nv, r2), Z, rhs, work)
    if bi >= 0:
        return c1, q2, q3, SINGULAR, 3
    Xc = (np.conj(U1) @ Z.reshape(r1, nv * r2)).reshape(r1 * nv, r2) @ np.conj(U3).T
    p2f, s2 = _qr_pos(np.real(Xc))
    p2 = p2f.reshape(r1, nv, r2)

    # substep 4: S <- S - dt eta ((X_J + Y_J)^T S + S Q3 J3 Q3^T)
    gv = _g_stage5(g1j, jsub[1], jdiag[1], jsup[1], p2)
    m3j = _right_sandwich(jsub[2], jdiag[2], jsup[2], q3)
    s2 = s2 - h * (gv.T @ s2 + s2 @ m3j)
    c3 = s2 @ q3

    # substep 5: G_V^T C + C T3 = C3, solved transposed
    gt = _g_stage5(G, tsub[1], tdiag[1], tsup[1], p2)
    Xt, st = _solve_big_first(tsub[2], tdiag[2], tsup[2], gt, np.ascontiguousarray(c3.T), sweeps2)
    if st != OK:
        return c1, q2, q3, st, 5

    # back to form I: right-orthonormalize cores 3 and 2
    q, r = _qr_pos(Xt)
    q3n = np.ascontiguousarray(q.T)
    c2n = p2f @ r.T
    unfold = np.ascontiguousarray(c2n.reshape(r1, nv * r2).T)
    q, r = _qr_pos(unfold)
    q2n = np.ascontiguousarray(q.T).reshape(r1, nv, r2)
    c1n = p1 @ r.T
    return c1n, q2n, q3n, OK, 0


@numba.njit(cache=True)
def _advance(c1, q2, q3, jsub, jdiag, jsup, dt, eta, nsteps):
    nb = c1.shape[0]
    for _ in range(nsteps):
        for b in range(nb):
            a1, a2, a3, st, stage = _step_point(c1[b], q2[b], q3[b], jsub, jdiag, jsup, dt, eta)
            if st != OK:
                return st, stage, b
            c1[b] = a1
            q2[b] = a2
            q3[b] = a3
    return OK, 0, -1


def advance_collision_only(c1, q2, q3, bands, dt: float, eta: float, nsteps: int = 1):
    """Advance form-I cores of every point by ``nsteps`` collision-only steps.

    Parameters
    ----------
    c1, q2, q3 : ndarray
        Batched cores of shapes (B, Nv, r1), (B, r1, Nv, r2), (B, r2, Nv);
        ``q2`` and ``q3`` must be right-orthonormal.
    bands : tuple of ndarray
        ``(sub, diag, sup)`` of the three collision matrices, shapes
        (3, Nv-1), (3, Nv), (3, Nv-1); shared by all points.
    dt, eta : float
        Time step and inverse Knudsen number.

    Returns
    -------
    (c1, q2, q3, status)
        New cores and ``(code, stage, point)``; ``code`` is ``OK`` on success.
    """
    c1 = np.array(c1, dtype=float, order="C")
    q2 = np.array(q2, dtype=float, order="C")
    q3 = np.array(q3, dtype=float, order="C")
    sub, diag, sup = (np.ascontiguousarray(b, dtype=float) for b in bands)
    status = _advance(c1, q2, q3, sub, diag, sup, float(dt), float(eta), int(nsteps))
    return c1, q2, q3, tuple(int(s) for s in status)
