"""Dense full-tensor reference implementations for small grids.

These routines work on full ``(Nx, Nv, Nv, Nv)`` arrays and plain dense
linear algebra.  They are slow by design and serve as ground truth for the
tensor-train code: the implicit-explicit step on the full grid, dense
Kronecker solves of Sylvester systems, and a dense replication of the
five-substep projector-splitting sweep in which every Galerkin system is
assembled explicitly from basis matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .domain import SpatialGrid, VelocityGrid
from .fokker_planck import TridiagonalMatrix, collision_tridiags
from .integrator import Model
from .moments import macro_from_moments
from .sylvester import SingularSystemError
from .tt import Form, TensorTrain3, tt_to_full

FULL_CAP = 2_000_000
KRONECKER_CAP = 10_000
LU_MAX_NV = 12
STRUCTURED_MAX_NV = 32


class OracleCapError(ValueError):
    """The requested dense problem exceeds the configured size cap."""


def _dense(L) -> np.ndarray:
    return L.to_dense() if isinstance(L, TridiagonalMatrix) else np.asarray(L, dtype=float)


# --------------------------------------------------------------------------
# Kronecker systems

def kronecker_operator(*mats) -> np.ndarray:
    """Matrix of ``X -> sum_d X x_d L_d`` acting on C-ordered ``vec(X)``.

    ``X x_d L`` contracts mode ``d`` of ``X`` against the row index of ``L``,
    so mode ``d`` is multiplied by ``L^T``.
    """
    dense = [_dense(L) for L in mats]
    sizes = [L.shape[0] for L in dense]
    total = int(np.prod(sizes))
    out = np.zeros((total, total))
    for d, L in enumerate(dense):
        left = np.eye(int(np.prod(sizes[:d])))
        right = np.eye(int(np.prod(sizes[d + 1:])))
        out += np.kron(np.kron(left, L.T), right)
    return out


def dense_kronecker_solve(L1, L2, L3=None, R=None) -> np.ndarray:
    """Solve ``X x_1 L1 + X x_2 L2 (+ X x_3 L3) = R`` by a dense linear solve.

    With two operators this is the matrix equation ``L1^T X + X L2 = R``.
    Banded operators may be passed as :class:`TridiagonalMatrix`.
    """
    if R is None:
        raise TypeError("right-hand side R is required")
    mats = [L1, L2] + ([L3] if L3 is not None else [])
    R = np.asarray(R, dtype=float)
    if R.ndim != len(mats):
        raise ValueError(f"R has {R.ndim} axes for {len(mats)} operators")
    if R.size > KRONECKER_CAP:
        raise OracleCapError(f"{R.size} unknowns exceed the dense cap {KRONECKER_CAP}")
    A = kronecker_operator(*mats)
    if A.shape[0] != R.size:
        raise ValueError(f"operator size {A.shape[0]} does not match R of size {R.size}")
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    if np.min(np.abs(np.diag(lu))) <= np.finfo(float).eps * np.max(np.abs(np.diag(lu))) * A.shape[0]:
        raise SingularSystemError("Kronecker system is numerically singular")
    return scipy.linalg.lu_solve((lu, piv), R.reshape(-1)).reshape(R.shape)


# --------------------------------------------------------------------------
# dense transport and moments

def dense_moments(f: np.ndarray, v_grid: VelocityGrid) -> np.ndarray:
    """Five moments of full tensors ``f`` of shape (..., Nv, Nv, Nv)."""
    v = v_grid.nodes
    w = v_grid.dv ** 3
    n = f.sum(axis=(-3, -2, -1))
    m1 = np.einsum("...ijk,i->...", f, v)
    m2 = np.einsum("...ijk,j->...", f, v)
    m3 = np.einsum("...ijk,k->...", f, v)
    v2 = v[:, None, None] ** 2 + v[None, :, None] ** 2 + v[None, None, :] ** 2
    e = np.einsum("...ijk,ijk->...", f, v2)
    return w * np.stack([n, m1, m2, m3, e], axis=-1)


def dense_transport(f: np.ndarray, E1, v_grid: VelocityGrid, x_grid: SpatialGrid | None,
                    with_x: bool = True) -> np.ndarray:
    """``v1 D_x f - E D_v1 f`` on full tensors of shape (Nx, Nv, Nv, Nv).

    Second-order one-sided upwind differences: periodic in x, zero ghost
    cells beyond the velocity domain.
    """
    nx, nv = f.shape[0], f.shape[1]
    out = np.zeros_like(f)
    v = v_grid.nodes
    if with_x:
        dx = x_grid.dx
        for j in range(nx):
            jm1, jm2 = (j - 1) % nx, (j - 2) % nx
            jp1, jp2 = (j + 1) % nx, (j + 2) % nx
            for k in range(nv):
                if v[k] > 0:
                    d = (3 * f[j, k] - 4 * f[jm1, k] + f[jm2, k]) / (2 * dx)
                else:
                    d = -(3 * f[j, k] - 4 * f[jp1, k] + f[jp2, k]) / (2 * dx)
                out[j, k] += v[k] * d
    if E1 is not None:
        dv = v_grid.dv
        g = np.zeros((nx, nv + 4) + f.shape[2:])
        g[:, 2:-2] = f
        for j in range(nx):
            e = float(E1[j])
            for k in range(nv):
                i = k + 2
                if e > 0:
                    d = (-g[j, i + 2] + 4 * g[j, i + 1] - 3 * g[j, i]) / (2 * dv)
                else:
                    d = (3 * g[j, i] - 4 * g[j, i - 1] + g[j, i - 2]) / (2 * dv)
                out[j, k] -= e * d
    return out


def dense_collision(f: np.ndarray, J) -> np.ndarray:
    """``sum_d f x_d J^(d)`` for every spatial point; ``J`` holds batched tridiagonals."""
    out = np.zeros_like(f)
    for j in range(f.shape[0]):
        for d in range(3):
            Jd = J[d] if J[d].batch_shape == () else J[d][j]
            out[j] += np.moveaxis(np.tensordot(f[j], Jd.to_dense(), axes=([d], [0])), -1, d)
    return out


def dense_rhs(f: np.ndarray, E1, model: Model, J=None, backward: bool = False) -> np.ndarray:
    """``f - dt A(f)`` (forward) or ``f + dt A(f) - dt eta Q f`` (backward) on full tensors."""
    A = np.zeros_like(f)
    if model.transport:
        A = dense_transport(f, E1 if model.field else None, model.v_grid, model.x_grid)
    if not backward:
        return f - model.dt * A
    out = f + model.dt * A
    if J is not None and model.eta != 0.0:
        out = out - model.dt * model.eta * dense_collision(f, J)
    return out


def _collision_ops(U_next: np.ndarray, model: Model):
    if model.eta == 0.0:
        return None
    if model.fixed_collision is not None:
        return model.fixed_collision
    macro = macro_from_moments(U_next)
    return collision_tridiags(macro.u, macro.T, model.v_grid)


def _next_moments(f: np.ndarray, U: np.ndarray, E1, model: Model) -> np.ndarray:
    if not model.transport:
        return U
    A = dense_transport(f, E1 if model.field else None, model.v_grid, model.x_grid)
    return U - model.dt * dense_moments(A, model.v_grid)


def _dense_current(f: np.ndarray, v_grid: VelocityGrid) -> np.ndarray:
    return -(v_grid.dv ** 3) * np.einsum("jikl,i->j", f, v_grid.nodes)


# --------------------------------------------------------------------------
# full-tensor IMEX step

@dataclass
class DenseState:
    t: float
    f: np.ndarray          # (Nx, Nv, Nv, Nv)
    U: np.ndarray          # (Nx, 5)
    E1: np.ndarray
    step_index: int = 0


def _shifted_dense(J, j, model: Model) -> list[np.ndarray]:
    nv = model.v_grid.nv
    out = []
    for d in range(3):
        if J is None:
            out.append(np.eye(nv) / 3.0)
            continue
        Jd = J[d] if J[d].batch_shape == () else J[d][j]
        out.append(np.eye(nv) / 3.0 - model.dt * model.eta * Jd.to_dense())
    return out


def _solve_lu(T, rhs: np.ndarray) -> np.ndarray:
    A = kronecker_operator(*T)
    return scipy.linalg.solve(A, rhs.reshape(-1)).reshape(rhs.shape)


def _solve_structured(T, rhs: np.ndarray) -> np.ndarray:
    # modes 1 and 3 through complex Schur forms, mode 2 by banded fiber solves
    M1, M2, M3 = (t.T for t in T)
    W1, U1 = scipy.linalg.schur(M1.astype(complex), output="complex")
    W3, U3 = scipy.linalg.schur(M3.astype(complex), output="complex")
    n1, n2, n3 = rhs.shape
    Rt = np.einsum("ai,ijl,cl->ajc", U1.conj().T, rhs.astype(complex), U3.conj().T)
    Y = np.zeros_like(Rt)
    ab = np.zeros((3, n2), dtype=complex)
    ab[0, 1:] = np.diag(M2, 1)
    ab[2, :-1] = np.diag(M2, -1)
    base = np.diag(M2).astype(complex)
    for a in range(n1 - 1, -1, -1):
        for c in range(n3 - 1, -1, -1):
            b = Rt[a, :, c].copy()
            if a + 1 < n1:
                b -= W1[a, a + 1:] @ Y[a + 1:, :, c]
            if c + 1 < n3:
                b -= Y[a, :, c + 1:] @ W3[c, c + 1:]
            ab[1] = base + W1[a, a] + W3[c, c]
            Y[a, :, c] = scipy.linalg.solve_banded((1, 1), ab, b)
    X = np.einsum("ia,ajc,lc->ijl", U1, Y, U3)
    return X.real


def dense_imex_step(state: DenseState, model: Model, cap: int = FULL_CAP) -> DenseState:
    """One implicit-explicit step on the full velocity grid.

    Solves ``(I - dt eta Q) f^{n+1} = f^n - dt A(f^n)`` at every spatial
    point, with ``Q`` built from the moment-updated Maxwellian.  Small grids
    (``Nv <= 12``) use a dense LU of the Kronecker-sum matrix; up to
    ``Nv = 32`` the system is solved with complex Schur forms of the first
    and third direction and banded solves along the second.
    """
    f = np.asarray(state.f, dtype=float)
    nx, nv = f.shape[0], f.shape[1]
    if f.size > cap:
        raise OracleCapError(f"{f.size} entries exceed the dense cap {cap}")
    if nv > STRUCTURED_MAX_NV:
        raise OracleCapError(f"Nv = {nv} exceeds the oracle limit {STRUCTURED_MAX_NV}")
    E1 = state.E1
    U_next = _next_moments(f, state.U, E1, model)
    J = _collision_ops(U_next, model)
    rhs = dense_rhs(f, E1, model)
    out = np.empty_like(f)
    for j in range(nx):
        T = _shifted_dense(J, j, model)
        out[j] = _solve_lu(T, rhs[j]) if nv <= LU_MAX_NV else _solve_structured(T, rhs[j])
    E_next = E1
    if model.field:
        E_next = E1 - model.dt * _dense_current(out, model.v_grid)
    return DenseState(state.t + model.dt, out, U_next, E_next, state.step_index + 1)


# --------------------------------------------------------------------------
# dense replication of the projector-splitting sweep

def _qr_pos(A: np.ndarray):
    Q, R = np.linalg.qr(A)
    s = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * s, R * s[:, None]


def _basis(kind: int, nv: int, a, b) -> np.ndarray:
    """Columns spanning the unknown of each substep, as (Nv^3, m) matrices.

    kind 1: C1 (Nv x r1) with frames Q2, Q3; kind 2: S1 with P1, Q2, Q3;
    kind 3: C2 (r1 x Nv x r2) with P1, Q3; kind 4: S2 with P1, P2, Q3;
    kind 5: C3 (r2 x Nv) with P1, P2.
    """
    eye = np.eye(nv)
    if kind == 1:
        q2, q3 = a, b
        phi = np.einsum("akb,bl->akl", q2, q3)                     # (r1, Nv, Nv)
        return np.einsum("ix,akl->iklxa", eye, phi).reshape(nv ** 3, -1)
    if kind == 2:
        p1, (q2, q3) = a, b
        phi = np.einsum("akb,bl->akl", q2, q3)
        return np.einsum("ia,ckl->iklac", p1, phi).reshape(nv ** 3, -1)
    if kind == 3:
        p1, q3 = a, b
        return np.einsum("ia,kx,bl->iklaxb", p1, eye, q3).reshape(nv ** 3, -1)
    if kind == 4:
        (p1, p2), q3 = a, b
        psi = np.einsum("ia,akb->ikb", p1, p2)                    # (Nv, Nv, r2)
        return np.einsum("ikb,cl->iklbc", psi, q3).reshape(nv ** 3, -1)
    p1, p2 = a, b
    psi = np.einsum("ia,akb->ikb", p1, p2)
    return np.einsum("ikb,lx->iklbx", psi, eye).reshape(nv ** 3, -1)


def _galerkin_solve(B: np.ndarray, A: np.ndarray | None, rhs: np.ndarray) -> np.ndarray:
    # orthonormal columns: the explicit update is a plain projection
    if A is None:
        return B.T @ rhs.reshape(-1)
    return np.linalg.solve(B.T @ A @ B, B.T @ rhs.reshape(-1))


def _field_full(cores) -> np.ndarray:
    return tt_to_full(TensorTrain3(*[np.stack(c) for c in zip(*cores)]))


def _right_orthonormal(c1, c2, c3):
    r1, nv, r2 = c2.shape
    q, r = _qr_pos(c3.T)
    c2 = np.einsum("akb,cb->akc", c2, r)
    q3 = q.T
    q, r = _qr_pos(c2.reshape(r1, nv * r2).T)
    return c1 @ r.T, q.T.reshape(r1, nv, r2), q3


def dense_projector_splitting_step(f: TensorTrain3, U: np.ndarray, E1, model: Model):
    """One time step replicated with dense frames and explicit Galerkin systems.

    ``f`` is a batched form-I tensor train over the spatial points.  Returns
    ``(f_next, U_next, E1_next)`` with ``f_next`` again in form I.
    """
    if f.form is not Form.I:
        raise ValueError("expected form I")
    nx = f.batch_shape[0]
    nv = f.nv
    r1, r2 = f.ranks
    if nx * nv ** 3 > FULL_CAP:
        raise OracleCapError(f"{nx * nv ** 3} entries exceed the dense cap {FULL_CAP}")
    full = tt_to_full(f)
    U_next = _next_moments(full, U, E1, model)
    J = _collision_ops(U_next, model)
    A_full = [kronecker_operator(*_shifted_dense(J, j, model)) for j in range(nx)]

    cores = [[f.core1[j], f.core2[j], f.core3[j]] for j in range(nx)]
    p1s, p2s, q2s, q3s = [None] * nx, [None] * nx, [c[1] for c in cores], [c[2] for c in cores]

    def rhs(backward=False):
        return dense_rhs(_field_full(cores), E1, model, J=J if backward else None, backward=backward)

    K = rhs()
    for j in range(nx):
        C = _galerkin_solve(_basis(1, nv, q2s[j], q3s[j]), A_full[j], K[j]).reshape(nv, r1)
        p1s[j], s1 = _qr_pos(C)
        cores[j] = [p1s[j] @ s1, q2s[j], q3s[j]]
    K = rhs(backward=True)
    for j in range(nx):
        s1 = _galerkin_solve(_basis(2, nv, p1s[j], (q2s[j], q3s[j])), None, K[j]).reshape(r1, r1)
        cores[j] = [p1s[j], np.einsum("ab,bkc->akc", s1, q2s[j]), q3s[j]]
    K = rhs()
    for j in range(nx):
        C = _galerkin_solve(_basis(3, nv, p1s[j], q3s[j]), A_full[j], K[j]).reshape(r1 * nv, r2)
        p2, s2 = _qr_pos(C)
        p2s[j] = p2.reshape(r1, nv, r2)
        cores[j] = [p1s[j], p2s[j], s2 @ q3s[j]]
    K = rhs(backward=True)
    for j in range(nx):
        s2 = _galerkin_solve(_basis(4, nv, (p1s[j], p2s[j]), q3s[j]), None, K[j]).reshape(r2, r2)
        cores[j] = [p1s[j], p2s[j], s2 @ q3s[j]]
    K = rhs()
    for j in range(nx):
        C = _galerkin_solve(_basis(5, nv, p1s[j], p2s[j]), A_full[j], K[j]).reshape(r2, nv)
        cores[j] = list(_right_orthonormal(p1s[j], p2s[j], C))
    f_next = TensorTrain3(*[np.stack(c) for c in zip(*cores)], form=Form.I)
    E_next = E1
    if model.field:
        E_next = E1 - model.dt * _dense_current(tt_to_full(f_next), model.v_grid)
    return f_next, U_next, E_next
