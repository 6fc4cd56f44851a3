"""Second-order upwind stencils in x and v1, and the electric field.

A field of tensor trains is stored as one batched :class:`TensorTrain3` whose
leading axis runs over the spatial points; periodic neighbours are obtained by
rolling that axis.  Every stencil term only rescales or shifts core 1, so the
stencil images stay in tensor-train form with ranks growing only through
concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import SpatialGrid, VelocityGrid
from .tt import TensorTrain3, TTSum

# (neighbour offset, coefficient) pairs of the one-sided second-order stencils;
# the v- branch -(-f[j+2] + 4 f[j+1] - 3 f[j]) is written with its sign folded in
_PLUS_STENCIL = ((0, 3.0), (-1, -4.0), (-2, 1.0))     # multiplies v+
_MINUS_STENCIL = ((0, 3.0), (1, -4.0), (2, 1.0))      # multiplies v-


@dataclass
class FieldState:
    """Electric field and current at the spatial nodes."""

    E1: np.ndarray
    J1: np.ndarray

    def copy(self) -> "FieldState":
        return FieldState(self.E1.copy(), self.J1.copy())


def shift_field(f_field: TensorTrain3, s: int) -> TensorTrain3:
    """Field whose entry ``j`` is ``f^{j+s}`` (periodic)."""
    if s == 0:
        return f_field
    c1, c2, c3 = f_field.general_cores()
    return TensorTrain3(np.roll(c1, -s, axis=0), np.roll(c2, -s, axis=0), np.roll(c3, -s, axis=0))


def velocity_splits(v_grid: VelocityGrid) -> tuple[np.ndarray, np.ndarray]:
    v = v_grid.nodes
    return np.maximum(v, 0.0), np.maximum(-v, 0.0)


def upwind_x(f_field: TensorTrain3, v_grid: VelocityGrid, x_grid: SpatialGrid) -> TTSum:
    """The six stencil terms of ``v1 D_x f``; every term is batched over j."""
    vp, vm = velocity_splits(v_grid)
    inv = 1.0 / (2.0 * x_grid.dx)
    terms = []
    for weights, stencil in ((vp, _PLUS_STENCIL), (vm, _MINUS_STENCIL)):
        for s, coef in stencil:
            c1, c2, c3 = shift_field(f_field, s).general_cores()
            terms.append(TensorTrain3((coef * inv) * weights[:, None] * c1, c2, c3))
    return TTSum(terms)


def forward_difference(c1: np.ndarray) -> np.ndarray:
    """``-c[k+2] + 4 c[k+1] - 3 c[k]`` along axis -2 with zero ghost rows."""
    out = -3.0 * c1
    out[..., :-1, :] += 4.0 * c1[..., 1:, :]
    out[..., :-2, :] -= c1[..., 2:, :]
    return out


def backward_difference(c1: np.ndarray) -> np.ndarray:
    """``3 c[k] - 4 c[k-1] + c[k-2]`` along axis -2 with zero ghost rows."""
    out = 3.0 * c1
    out[..., 1:, :] -= 4.0 * c1[..., :-1, :]
    out[..., 2:, :] += c1[..., :-2, :]
    return out


def force_core(c1: np.ndarray, E1, dv: float) -> np.ndarray:
    """Core 1 of ``E D_v1 f``: ``[E+ (forward) - E- (backward)] / (2 dv)``."""
    E1 = np.asarray(E1, dtype=float)
    ep = np.maximum(E1, 0.0)[..., None, None]
    em = np.maximum(-E1, 0.0)[..., None, None]
    return (ep * forward_difference(c1) - em * backward_difference(c1)) / (2.0 * dv)


def upwind_v1(f: TensorTrain3, E1, v_grid: VelocityGrid) -> TTSum:
    """``E D_v1 f`` as a single-term sum (only core 1 changes).

    The kinetic equation carries this term with a minus sign (force ``-E``);
    that sign is applied by the caller.
    """
    c1, c2, c3 = f.general_cores()
    return TTSum([TensorTrain3(force_core(c1, E1, v_grid.dv), c2, c3)])


def transport_core1_terms(c1: np.ndarray, E1, v_grid: VelocityGrid, x_grid: SpatialGrid | None,
                          with_x: bool = True) -> dict[int, np.ndarray]:
    """Merged core-1 factors of the explicit operator ``A(f) = v1 D_x f - E D_v1 f``.

    Returns ``{s: A_s}`` with ``A(f)^j = sum_s [[A_s^j, f2^{j+s}, f3^{j+s}]]``,
    where ``c1`` is core 1 of every point (batch axis 0).  Terms with the same
    neighbour are merged, so the sum has at most five terms.
    """
    terms: dict[int, np.ndarray] = {}
    if with_x:
        vp, vm = velocity_splits(v_grid)
        inv = 1.0 / (2.0 * x_grid.dx)
        for weights, stencil in ((vp, _PLUS_STENCIL), (vm, _MINUS_STENCIL)):
            for s, coef in stencil:
                rolled = np.roll(c1, -s, axis=0) if s else c1
                term = (coef * inv) * weights[:, None] * rolled
                terms[s] = terms[s] + term if s in terms else term
    if E1 is not None and np.any(np.asarray(E1) != 0.0):
        force = -force_core(c1, E1, v_grid.dv)
        terms[0] = terms[0] + force if 0 in terms else force
    return terms


def current(f_field: TensorTrain3, v_grid: VelocityGrid) -> np.ndarray:
    """``J1_j = -dv^3 sum_k v_{k1} f^j_k`` by factorized contraction."""
    c1, c2, c3 = f_field.general_cores()
    v = v_grid.nodes
    a = np.einsum("k,...ka->...a", v, c1)
    b = c2.sum(axis=-2)
    c = c3.sum(axis=-1)
    return -(v_grid.dv ** 3) * np.einsum("...a,...ab,...b->...", a, b, c)


def ampere_step(E1: np.ndarray, J1: np.ndarray, dt: float) -> np.ndarray:
    return E1 - dt * J1


def gauss_initial_E(A: float, kappa: float, x_grid: SpatialGrid) -> np.ndarray:
    """``E(0, x) = -(A / kappa) sin(kappa x)`` at the spatial nodes."""
    if kappa == 0:
        raise ValueError("kappa must be non-zero")
    return -(A / kappa) * np.sin(kappa * x_grid.nodes)


def electric_energy(E1: np.ndarray, dx: float) -> float:
    return 0.5 * dx * float(np.sum(np.asarray(E1) ** 2))
