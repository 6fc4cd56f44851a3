"""Five-substep projector-splitting time step with implicit collisions.

All spatial points advance through each substep together (lockstep); the
transport terms of a substep read the neighbours' representation from the
same substep.  Substeps 1, 3 and 5 solve the Galerkin-projected implicit
equation ``(I - dt eta Q_M) f~ = f - dt A(f)``; substeps 2 and 4 project the
explicit backward equation ``f~ = f + dt A(f) - dt eta Q_M f``, where
``A(f) = v1 D_x f - E D_v1 f`` is the explicit transport operator.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .domain import Case, SimConfig, SpatialGrid, VelocityGrid
from .fused import OK, SCHUR_FAILED, advance_collision_only
from .fokker_planck import (
    TridiagonalMatrix,
    build_collision_tridiag,
    build_shifted_tridiag,
    collision_tridiags,
    galerkin_stage1,
    galerkin_stage3,
    galerkin_stage5,
)
from .moments import MacroState, macro_from_moments, update_moments
from .sylvester import (
    Orientation,
    SchurConvergenceError,
    SingularSystemError,
    solve_matrix_sylvester,
    solve_tensor_sylvester,
)
from .transport import FieldState, ampere_step, current, transport_core1_terms
from .tt import (
    Form,
    TensorTrain3,
    TTSum,
    orthogonalize_step,
    project_left,
    project_middle,
    project_right,
    tt_concat_sum,
)


class StepError(RuntimeError):
    """A substep failed; the message names the stage and the spatial point."""


@dataclass(frozen=True)
class Model:
    """Physics switches and grids used by the time step."""

    v_grid: VelocityGrid
    x_grid: SpatialGrid
    eta: float
    dt: float
    transport: bool = True
    field: bool = False
    fixed_collision: tuple[TridiagonalMatrix, TridiagonalMatrix, TridiagonalMatrix] | None = None
    check_forms: bool = True
    compiled: bool = True   # use the compiled kernel for collision-only steps

    @property
    def collision_only(self) -> bool:
        return not self.transport and not self.field and (self.fixed_collision is not None or self.eta == 0.0)

    @cached_property
    def collision_bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(sub, diag, sup)`` of the fixed collision matrices stacked by direction."""
        if self.fixed_collision is None:
            nv = self.v_grid.nv
            return np.zeros((3, nv - 1)), np.zeros((3, nv)), np.zeros((3, nv - 1))
        return tuple(
            np.ascontiguousarray(np.stack([np.broadcast_to(getattr(j, name), (j.n - (name != "diag"),))
                                           for j in self.fixed_collision]), dtype=float)
            for name in ("sub", "diag", "sup"))

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Model":
        fixed = None
        if cfg.case is Case.HOMOGENEOUS_FP:
            # linear equation relaxing to the standard Maxwellian (n = 1, u = 0, T = 1)
            fixed = collision_tridiags(np.zeros(3), np.array(1.0), cfg.v_grid)
        elif cfg.case is Case.HEAT:
            J = build_collision_tridiag(np.ones(cfg.v_grid.nv), 1.0, cfg.v_grid.dv)
            fixed = (J, J, J)
        return cls(
            v_grid=cfg.v_grid,
            x_grid=cfg.x_grid,
            eta=cfg.eta,
            dt=cfg.dt,
            transport=not cfg.case.is_homogeneous,
            field=cfg.case.has_field,
            fixed_collision=fixed,
        )


@dataclass
class SimState:
    t: float
    f: TensorTrain3          # batched over spatial points, form I between steps
    U: np.ndarray            # (Nx, 5) moment vectors carried by the conservative update
    fields: FieldState
    step_index: int = 0

    @property
    def macro(self) -> MacroState:
        return macro_from_moments(self.U)


@dataclass(frozen=True, eq=False)
class StageOperators:
    J: tuple[TridiagonalMatrix, TridiagonalMatrix, TridiagonalMatrix] | None
    T: tuple[TridiagonalMatrix, TridiagonalMatrix, TridiagonalMatrix]


def build_stage_operators(macro: MacroState | None, model: Model, nx: int) -> StageOperators:
    """``J^(d)`` from the time-(n+1) Maxwellian and ``T^(d) = I/3 - dt eta J^(d)``."""
    nv = model.v_grid.nv
    if model.eta == 0.0:
        eye = TridiagonalMatrix(np.zeros((nx, nv - 1)), np.full((nx, nv), 1.0 / 3.0), np.zeros((nx, nv - 1)))
        return StageOperators(None, (eye, eye, eye))
    if model.fixed_collision is not None:
        J = tuple(
            TridiagonalMatrix(*(np.broadcast_to(b, (nx,) + b.shape[-1:]) for b in (j.sub, j.diag, j.sup)))
            for j in model.fixed_collision
        )
    else:
        J = collision_tridiags(macro.u, macro.T, model.v_grid)
    T = tuple(build_shifted_tridiag(j, model.dt, model.eta) for j in J)
    return StageOperators(J, T)


# --------------------------------------------------------------------------
# right-hand sides

def _explicit_terms(c1, E1, model: Model) -> dict[int, np.ndarray]:
    if not model.transport:
        return {}
    return transport_core1_terms(c1, E1 if model.field else None, model.v_grid, model.x_grid)


def rhs_terms(f: TensorTrain3, E1, model: Model, ops: StageOperators | None = None,
              backward: bool = False) -> TTSum:
    """Terms of ``f - dt A(f)`` (forward) or ``f + dt A(f) - dt eta Q_M f`` (backward), batched over j."""
    c1, c2, c3 = f.general_cores()
    dt = model.dt
    sign = 1.0 if backward else -1.0
    terms = _explicit_terms(c1, E1, model)
    head = c1 + (sign * dt) * terms.pop(0) if 0 in terms else c1
    collide = backward and model.eta != 0.0 and ops is not None and ops.J is not None
    scale = -dt * model.eta
    if collide:
        head = head + scale * ops.J[0].rmatmul(c1, -2)
    out = [TensorTrain3(head, c2, c3)]
    for s, a1 in sorted(terms.items()):
        out.append(TensorTrain3((sign * dt) * a1, np.roll(c2, -s, axis=0), np.roll(c3, -s, axis=0)))
    if collide:
        out.append(TensorTrain3(c1, scale * ops.J[1].rmatmul(c2, -2), c3))
        out.append(TensorTrain3(c1, c2, scale * ops.J[2].rmatmul(c3, -1)))
    return TTSum(out)


def build_rhs_K(f: TensorTrain3, E1, model: Model) -> TensorTrain3:
    """``K = f - dt A(f)`` as one concatenated (General form) tensor train per point."""
    return tt_concat_sum(rhs_terms(f, E1, model))


# --------------------------------------------------------------------------
# substeps

@contextmanager
def _solver_errors(stage: int):
    try:
        yield
    except (SingularSystemError, SchurConvergenceError) as exc:
        raise StepError(f"substep {stage}: {exc} (batch entry = spatial index j)") from exc


def forward_substep(stage: int, f: TensorTrain3, K: TTSum | TensorTrain3, ops: StageOperators,
                    check: bool = True) -> TensorTrain3:
    T1, T2, T3 = ops.T
    # without collisions every T is I/3 and each projected system is the identity
    collisionless = ops.J is None
    with _solver_errors(stage):
        if stage == 1:
            if f.form is not Form.I:
                raise ValueError("substep 1 expects form I")
            q2, q3 = f.core2, f.core3
            R = project_right(K, q2, q3)
            if collisionless:
                C = R
            else:
                H = galerkin_stage1(T2, T3, q2, q3, check=check)
                C = solve_matrix_sylvester(T1, H, R, Orientation.BIG_FIRST)
            return orthogonalize_step(TensorTrain3(C, q2, q3, Form.I), Form.II)
        if stage == 3:
            if f.form is not Form.III:
                raise ValueError("substep 3 expects form III")
            p1, q3 = f.core1, f.core3
            R = project_middle(K, p1, q3)
            if collisionless:
                C = R
            else:
                G, H = galerkin_stage3(T1, T3, p1, q3, check=check)
                C = solve_tensor_sylvester(G, T2, H, R)
            return orthogonalize_step(TensorTrain3(p1, C, q3, Form.III), Form.IV)
        if stage == 5:
            if f.form is not Form.V:
                raise ValueError("substep 5 expects form V")
            p1, p2 = f.core1, f.core2
            R = project_left(K, p1, p2)
            if collisionless:
                C = R
            else:
                G = galerkin_stage5(T1, T2, p1, p2, check=check)
                C = solve_matrix_sylvester(T3, G, R, Orientation.BIG_SECOND)
            return orthogonalize_step(TensorTrain3(p1, p2, C, Form.V), Form.I)
    raise ValueError(f"forward stage must be 1, 3 or 5, got {stage}")


def backward_substep(stage: int, f: TensorTrain3, K: TTSum | TensorTrain3) -> TensorTrain3:
    """Galerkin update of the S factor from the explicit backward equation, then absorb it."""
    if stage == 2:
        if f.form is not Form.II:
            raise ValueError("substep 2 expects form II")
        s = np.swapaxes(f.core1, -1, -2) @ project_right(K, f.core2, f.core3)
        return orthogonalize_step(TensorTrain3(f.core1, f.core2, f.core3, Form.II, s), Form.III)
    if stage == 4:
        if f.form is not Form.IV:
            raise ValueError("substep 4 expects form IV")
        s = project_left(K, f.core1, f.core2) @ np.swapaxes(f.core3, -1, -2)
        return orthogonalize_step(TensorTrain3(f.core1, f.core2, f.core3, Form.IV, s), Form.V)
    raise ValueError(f"backward stage must be 2 or 4, got {stage}")


def projector_splitting_sweep(f: TensorTrain3, E1, model: Model, ops: StageOperators) -> TensorTrain3:
    """Substeps 1-5 in lockstep over all spatial points; form I in, form I out."""
    check = model.check_forms
    for stage in (1, 2, 3, 4, 5):
        if stage % 2:
            f = forward_substep(stage, f, rhs_terms(f, E1, model), ops, check=check)
        else:
            f = backward_substep(stage, f, rhs_terms(f, E1, model, ops, backward=True))
    return f


def compiled_collision_step(f: TensorTrain3, model: Model, nsteps: int = 1) -> TensorTrain3:
    """``nsteps`` collision-only sweeps through the compiled kernel (form I in and out)."""
    if f.form is not Form.I:
        raise ValueError("compiled step expects form I")
    c1, q2, q3, (code, stage, point) = advance_collision_only(
        f.core1, f.core2, f.core3, model.collision_bands, model.dt, model.eta, nsteps)
    if code != OK:
        what = "Schur iteration did not converge" if code == SCHUR_FAILED else "singular tridiagonal system"
        raise StepError(f"substep {stage}: {what} (spatial index j = {point})")
    return TensorTrain3(c1, q2, q3, Form.I)


def time_step(state: SimState, model: Model) -> SimState:
    """Advance ``state`` by one step of size ``model.dt``."""
    f = state.f
    if model.compiled and model.collision_only:
        return replace(state, t=state.t + model.dt, f=compiled_collision_step(f, model),
                       step_index=state.step_index + 1)
    nx = f.batch_shape[0]
    E1 = state.fields.E1
    if model.transport:
        U_next = update_moments(state.U, f, E1 if model.field else None, model.dt, model.v_grid, model.x_grid)
    else:
        U_next = state.U
    macro = None
    if model.eta != 0.0 and model.fixed_collision is None:
        macro = macro_from_moments(U_next)
    ops = build_stage_operators(macro, model, nx)
    f_next = projector_splitting_sweep(f, E1, model, ops)
    fields = state.fields
    if model.field:
        J1 = current(f_next, model.v_grid)
        fields = FieldState(ampere_step(E1, J1, model.dt), J1)
    return replace(state, t=state.t + model.dt, f=f_next, U=U_next, fields=fields,
                   step_index=state.step_index + 1)
