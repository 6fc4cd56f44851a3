"""Finite-difference Fokker-Planck operator in tensor-train form.

The collision operator for a given separable Maxwellian acts on each velocity
direction through a tridiagonal matrix ``J``; in the mode-product convention
``(f1 x_1 J)[k, a] = sum_i J[i, k] f1[i, a]`` the first-direction part of the
operator replaces core 1 by ``J^T @ core1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import VelocityGrid
from .tt import TensorTrain3, TTSum, left_gram1, left_gram2, right_gram2, right_gram3

MIN_TEMPERATURE = 1e-12


@dataclass(frozen=True, eq=False)
class TridiagonalMatrix:
    """Three-band ``Nv x Nv`` matrix, optionally batched over leading axes.

    ``sub[k]`` sits at ``(k+1, k)``, ``diag[k]`` at ``(k, k)`` and ``sup[k]``
    at ``(k, k+1)``.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        n = self.diag.shape[-1]
        if self.sub.shape[-1] != n - 1 or self.sup.shape[-1] != n - 1:
            raise ValueError(f"band lengths {self.sub.shape[-1]}, {n}, {self.sup.shape[-1]} are inconsistent")

    @property
    def n(self) -> int:
        return self.diag.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.diag.shape[:-1]

    def __getitem__(self, idx) -> "TridiagonalMatrix":
        return TridiagonalMatrix(self.sub[idx], self.diag[idx], self.sup[idx])

    def transpose(self) -> "TridiagonalMatrix":
        return TridiagonalMatrix(self.sup, self.diag, self.sub)

    def shifted(self, scale: float, shift: float) -> "TridiagonalMatrix":
        """``shift * I + scale * self``."""
        return TridiagonalMatrix(scale * self.sub, shift + scale * self.diag, scale * self.sup)

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros(self.batch_shape + (n, n), dtype=np.result_type(self.diag, self.sub))
        i = np.arange(n)
        out[..., i, i] = self.diag
        out[..., i[1:], i[:-1]] = self.sub
        out[..., i[:-1], i[1:]] = self.sup
        return out

    def row_sums(self) -> np.ndarray:
        """Row sums, accumulated off-diagonals first so that ``diag = -(sub + sup)`` gives exact zeros."""
        zero = np.zeros(self.batch_shape + (1,))
        left = np.concatenate([zero, self.sub], axis=-1)
        right = np.concatenate([self.sup, zero], axis=-1)
        return (left + right) + self.diag

    def norm_inf(self) -> np.ndarray:
        zero = np.zeros(self.batch_shape + (1,))
        return np.max(
            np.abs(np.concatenate([zero, self.sub], -1)) + np.abs(self.diag) + np.abs(np.concatenate([self.sup, zero], -1)),
            axis=-1,
        )

    def rmatmul(self, X: np.ndarray, axis: int) -> np.ndarray:
        """``sum_i X[..., i, ...] A[i, j]`` along ``axis`` (i.e. ``A^T`` applied to that mode).

        Band batch axes align with the leading axes of ``X``.
        """
        return _band_apply(self.sup, self.diag, self.sub, X, axis)

    def matmul(self, X: np.ndarray, axis: int) -> np.ndarray:
        """``sum_j A[i, j] X[..., j, ...]`` along ``axis``."""
        return _band_apply(self.sub, self.diag, self.sup, X, axis)


def _band_apply(lower, diag, upper, X, axis):
    # y[i] = lower[i-1] x[i-1] + diag[i] x[i] + upper[i] x[i+1]
    X = np.asarray(X)
    axis = axis % X.ndim
    nb = diag.ndim - 1
    Xm = np.moveaxis(X, axis, -1)
    pad = (1,) * (Xm.ndim - nb - 1)

    def shape(band):
        return band.reshape(band.shape[:-1] + pad + band.shape[-1:])

    lo, di, up = shape(lower), shape(diag), shape(upper)
    y = di * Xm
    y[..., 1:] += lo * Xm[..., :-1]
    y[..., :-1] += up * Xm[..., 1:]
    return np.moveaxis(y, -1, axis)


@dataclass(frozen=True, eq=False)
class MaxwellianFactors:
    """Separable Maxwellian ``n (2 pi T)^{-3/2} m1(v1) m2(v2) m3(v3)`` (batched over leading axes)."""

    n: np.ndarray
    u: np.ndarray
    T: np.ndarray
    m: np.ndarray  # (..., 3, Nv)

    @property
    def m1(self) -> np.ndarray:
        return self.m[..., 0, :]

    @property
    def m2(self) -> np.ndarray:
        return self.m[..., 1, :]

    @property
    def m3(self) -> np.ndarray:
        return self.m[..., 2, :]

    @property
    def prefactor(self) -> np.ndarray:
        return self.n / (2.0 * np.pi * self.T) ** 1.5


def build_maxwellian(n, u, T, grid: VelocityGrid) -> MaxwellianFactors:
    n = np.asarray(n, dtype=float)
    u = np.asarray(u, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(n <= 0):
        raise ValueError("density must be positive")
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    if u.shape[-1] != 3:
        raise ValueError("bulk velocity must have three components")
    v = grid.nodes
    m = np.exp(-((v - u[..., :, None]) ** 2) / (2.0 * T[..., None, None]))
    return MaxwellianFactors(n, u, T, m)


def maxwellian_tt(mf: MaxwellianFactors) -> TensorTrain3:
    pre = mf.prefactor
    return TensorTrain3(
        (pre[..., None] * mf.m1)[..., :, None],
        mf.m2[..., None, :, None],
        mf.m3[..., None, :],
    )


def _assemble(ratio_up: np.ndarray, ratio_down: np.ndarray, coef: np.ndarray) -> TridiagonalMatrix:
    # ratio_up[i] = m[i+1]/m[i], ratio_down[i] = m[i]/m[i+1]
    coef = coef[..., None]
    sup = coef * (1.0 + ratio_up)        # a_{k+1}
    sub = coef * (1.0 + ratio_down)      # b_k
    zero = np.zeros(sub.shape[:-1] + (1,))
    left = np.concatenate([zero, sub], axis=-1)
    right = np.concatenate([sup, zero], axis=-1)
    diag = -(left + right)
    return TridiagonalMatrix(sub, diag, sup)


def build_collision_tridiag(m, T, dv: float) -> TridiagonalMatrix:
    """Tridiagonal ``J`` of one velocity direction for Maxwellian factor ``m``.

    Zero-flux boundaries give ``a_1 = b_Nv = 0``; the diagonal is assembled as
    ``-(b_{k-1} + a_{k+1})`` so that every row of ``J`` sums to zero and
    ``J^T m = 0``.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise ValueError("Maxwellian factor must be strictly positive and finite")
    T = np.asarray(T, dtype=float)
    coef = np.broadcast_to(T / (2.0 * dv * dv), m.shape[:-1])
    return _assemble(m[..., 1:] / m[..., :-1], m[..., :-1] / m[..., 1:], coef)


def collision_tridiags(u, T, grid: VelocityGrid) -> tuple[TridiagonalMatrix, TridiagonalMatrix, TridiagonalMatrix]:
    """``J^(1..3)`` straight from macro quantities, using ratios in log form.

    Equivalent to :func:`build_collision_tridiag` on the Maxwellian factors but
    immune to underflow of ``m`` far in the tails.
    """
    u = np.asarray(u, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(T < MIN_TEMPERATURE):
        raise ValueError(f"temperature below {MIN_TEMPERATURE}: {np.min(T)}")
    v = grid.nodes
    dv = grid.dv
    coef = T / (2.0 * dv * dv)
    out = []
    for d in range(3):
        w = (v - u[..., d, None]) ** 2 / (2.0 * T[..., None])
        log_up = w[..., :-1] - w[..., 1:]         # log(m[i+1]/m[i])
        out.append(_assemble(np.exp(log_up), np.exp(-log_up), coef))
    return tuple(out)


def build_shifted_tridiag(J: TridiagonalMatrix, dt: float, eta: float) -> TridiagonalMatrix:
    """``T = I/3 - dt * eta * J``."""
    return J.shifted(-dt * eta, 1.0 / 3.0)


def apply_collision_tt(f: TensorTrain3, J1: TridiagonalMatrix, J2: TridiagonalMatrix, J3: TridiagonalMatrix) -> TTSum:
    """The three single-core terms whose sum is the discrete collision operator applied to ``f``."""
    c1, c2, c3 = f.general_cores()
    return TTSum([
        TensorTrain3(J1.rmatmul(c1, -2), c2, c3),
        TensorTrain3(c1, J2.rmatmul(c2, -2), c3),
        TensorTrain3(c1, c2, J3.rmatmul(c3, -1)),
    ])


# --------------------------------------------------------------------------
# Galerkin coefficient matrices

ORTHONORMALITY_TOL = 1e-8


def _check(name: str, gram: np.ndarray) -> None:
    eye = np.eye(gram.shape[-1])
    err = float(np.max(np.abs(gram - eye), initial=0.0))
    if err > ORTHONORMALITY_TOL:
        raise ValueError(f"{name} is not orthonormal (residual {err:.3e})")


def sandwich_left(T: TridiagonalMatrix, p1: np.ndarray) -> np.ndarray:
    """``P1^T T P1`` for a left-orthonormal core 1 (..., Nv, r1)."""
    return np.swapaxes(p1, -1, -2) @ T.matmul(p1, -2)


def sandwich_right(T: TridiagonalMatrix, q3: np.ndarray) -> np.ndarray:
    """``Q3 T Q3^T`` for a right-orthonormal core 3 (..., r2, Nv)."""
    return T.rmatmul(q3, -1) @ np.swapaxes(q3, -1, -2)


def galerkin_stage1(T2: TridiagonalMatrix, T3: TridiagonalMatrix, q2: np.ndarray, q3: np.ndarray,
                    check: bool = True) -> np.ndarray:
    """``H_I`` (r1 x r1) so that the projected implicit equation is ``T1^T C + C H_I = R_I``."""
    if check:
        _check("core 2", right_gram2(q2))
        _check("core 3", right_gram3(q3))
    r1, nv, r2 = q2.shape[-3:]
    batch = q2.shape[:-3]
    q2f = np.swapaxes(q2.reshape(batch + (r1, nv * r2)), -1, -2)
    t2q2 = T2.rmatmul(q2, -2).reshape(batch + (r1, nv * r2))
    m3 = sandwich_right(T3, q3)
    q2m = (q2.reshape(batch + (r1 * nv, r2)) @ m3).reshape(m3.shape[:-2] + (r1, nv * r2))
    return t2q2 @ q2f + q2m @ q2f


def galerkin_stage3(T1: TridiagonalMatrix, T3: TridiagonalMatrix, p1: np.ndarray, q3: np.ndarray,
                    check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(G_III, H_III)`` for ``C x_1 G + C x_2 T2 + C x_3 H = R_III``."""
    if check:
        _check("core 1", left_gram1(p1))
        _check("core 3", right_gram3(q3))
    return sandwich_left(T1, p1), sandwich_right(T3, q3)


def galerkin_stage5(T1: TridiagonalMatrix, T2: TridiagonalMatrix, p1: np.ndarray, p2: np.ndarray,
                    check: bool = True) -> np.ndarray:
    """``G_V`` (r2 x r2) for ``G_V^T C + C T3 = R_V``."""
    if check:
        _check("core 1", left_gram1(p1))
        _check("core 2", left_gram2(p2))
    g1 = sandwich_left(T1, p1)
    r1, nv, r2 = p2.shape[-3:]
    batch = p2.shape[:-3]
    p2f = p2.reshape(batch + (r1 * nv, r2))
    tmp = (np.swapaxes(g1, -1, -2) @ p2.reshape(batch + (r1, nv * r2))).reshape(g1.shape[:-2] + (r1 * nv, r2))
    t2p2 = T2.rmatmul(p2, -2).reshape(batch + (r1 * nv, r2))
    return np.swapaxes(tmp, -1, -2) @ p2f + np.swapaxes(t2p2, -1, -2) @ p2f


def galerkin_matrices(stage: int, T1, T2, T3, cores, check: bool = True):
    """Dispatch on the forward stage: ``cores`` is (Q2, Q3), (P1, Q3) or (P1, P2)."""
    if stage == 1:
        return galerkin_stage1(T2, T3, *cores, check=check)
    if stage == 3:
        return galerkin_stage3(T1, T3, *cores, check=check)
    if stage == 5:
        return galerkin_stage5(T1, T2, *cores, check=check)
    raise ValueError(f"stage must be 1, 3 or 5, got {stage}")
