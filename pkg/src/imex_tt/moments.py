"""Discrete velocity moments and the conservative macroscopic update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import SpatialGrid, VelocityGrid
from .tt import TensorTrain3
from .transport import transport_core1_terms


@dataclass(frozen=True, eq=False)
class MacroState:
    """Density, bulk velocity and temperature (batched over leading axes)."""

    n: np.ndarray
    u: np.ndarray   # (..., 3)
    T: np.ndarray


def _core_sums(c1, c2, c3, v):
    # per-core sums against 1, v and v^2 along the velocity axis
    powers = np.stack([np.ones_like(v), v, v * v])                    # (3, Nv)
    s1 = powers @ c1                                                  # (..., 3, r1)
    s2 = np.moveaxis(powers @ c2, -2, -3)                             # (..., 3, r1, r2)
    s3 = np.swapaxes(c3 @ powers.T, -1, -2)                           # (..., 3, r2)
    return s1, s2, s3


def _chain(a, b, c):
    return np.einsum("...a,...ab,...b->...", a, b, c)


def moments_from_cores(c1, c2, c3, v_grid: VelocityGrid) -> np.ndarray:
    """The five moments of ``[[c1, c2, c3]]`` with midpoint weight ``dv^3``; shape (..., 5)."""
    s1, s2, s3 = _core_sums(c1, c2, c3, v_grid.nodes)
    w = v_grid.dv ** 3
    n = _chain(s1[..., 0, :], s2[..., 0, :, :], s3[..., 0, :])
    m1 = _chain(s1[..., 1, :], s2[..., 0, :, :], s3[..., 0, :])
    m2 = _chain(s1[..., 0, :], s2[..., 1, :, :], s3[..., 0, :])
    m3 = _chain(s1[..., 0, :], s2[..., 0, :, :], s3[..., 1, :])
    e = (
        _chain(s1[..., 2, :], s2[..., 0, :, :], s3[..., 0, :])
        + _chain(s1[..., 0, :], s2[..., 2, :, :], s3[..., 0, :])
        + _chain(s1[..., 0, :], s2[..., 0, :, :], s3[..., 2, :])
    )
    return w * np.stack([n, m1, m2, m3, e], axis=-1)


def moments_from_tt(f: TensorTrain3, v_grid: VelocityGrid) -> np.ndarray:
    """``U = sum_k f_k (1, v_k, |v_k|^2) dv^3`` without forming the full tensor."""
    return moments_from_cores(*f.general_cores(), v_grid)


def macro_from_moments(U: np.ndarray) -> MacroState:
    U = np.asarray(U, dtype=float)
    n = U[..., 0]
    if np.any(n <= 0):
        raise ValueError(f"non-positive density in moment vector (min {np.min(n):.3e})")
    u = U[..., 1:4] / n[..., None]
    T = (U[..., 4] - n * np.sum(u * u, axis=-1)) / (3.0 * n)
    if np.any(T <= 0):
        raise ValueError(f"non-positive temperature recovered from moments (min {np.min(T):.3e})")
    return MacroState(n, u, T)


def moments_from_macro(macro: MacroState) -> np.ndarray:
    n, u, T = macro.n, macro.u, macro.T
    return np.concatenate(
        [n[..., None], n[..., None] * u, (n * np.sum(u * u, axis=-1) + 3.0 * n * T)[..., None]], axis=-1
    )


def transport_moments(f_field: TensorTrain3, E1, v_grid: VelocityGrid, x_grid: SpatialGrid,
                      with_x: bool = True) -> np.ndarray:
    """Moments of ``v1 D_x f + F D_v1 f`` (force ``F = -E``) at every spatial point; shape (Nx, 5)."""
    c1, c2, c3 = f_field.general_cores()
    terms = transport_core1_terms(c1, E1, v_grid, x_grid, with_x=with_x)
    out = np.zeros(f_field.batch_shape + (5,))
    for s, a1 in terms.items():
        if s:
            out += moments_from_cores(a1, np.roll(c2, -s, axis=0), np.roll(c3, -s, axis=0), v_grid)
        else:
            out += moments_from_cores(a1, c2, c3, v_grid)
    return out


def update_moments(U: np.ndarray, f_field: TensorTrain3, E1, dt: float, v_grid: VelocityGrid,
                   x_grid: SpatialGrid, with_x: bool = True) -> np.ndarray:
    """``U^{n+1} = U^n - dt * moments(transport stencils of f^n)``.

    The collision operator conserves all five moments and does not appear.
    """
    return np.asarray(U) - dt * transport_moments(f_field, E1, v_grid, x_grid, with_x=with_x)
