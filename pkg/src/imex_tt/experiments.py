"""Experiment drivers: initial data, run orchestration, studies and output files.

Every run writes into ``cfg.output_dir``:

``diagnostics.csv``
    one row per ``snapshot_stride`` steps (schema tag in the first line);
``final_state.tt3``
    binary tensor-train snapshot of the final field;
``macro_profiles.csv``
    density, bulk velocity, temperature, field and current per spatial node;
``error.csv``
    relative error against the closed-form solution (homogeneous cases);
``energy.csv``, ``phase_t*.csv``
    electric energy per step and (x, v1) phase-plane data (field cases);
``manifest.json``
    inputs, code version, wall time and the list of artifacts.
"""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.signal

from .domain import Case, SimConfig, SpatialGrid, VelocityGrid
from .fokker_planck import build_maxwellian, maxwellian_tt
from .integrator import Model, SimState, StepError, time_step
from .moments import macro_from_moments, moments_from_tt
from .transport import FieldState, current, electric_energy, gauss_initial_E
from .tt import (
    Form,
    TensorTrain3,
    effective_rank,
    pad_rank,
    right_orthonormalize,
    save_snapshot,
    to_form,
    tt_concat_sum,
)

SCHEMA_TAG = "imex-tt-diagnostics/1"
DIAG_COLUMNS = (
    "t", "electric_energy", "total_mass", "total_momentum_1", "total_energy",
    "R1", "R2", "tt_mass", "wall_seconds_cumulative",
)
WORKERS_ENV = "IMEX_TT_WORKERS"

# default case parameters (overridable through [case.<name>] sections)
DEFAULTS = {
    Case.HOMOGENEOUS_FP: {"T0": 1.0 - math.exp(-1.0)},
    Case.HEAT: {"sigma2": 1.0},
    Case.INHOMOGENEOUS_FP: {"u1": 0.2},
    Case.LANDAU_DAMPING: {"A": 0.001, "kappa": 0.5},
    Case.TWO_STREAM: {"A": 0.005, "kappa": 0.2, "v_star": 2.4},
}


def _param(case: Case, params: dict, name: str) -> float:
    # section keys are lower-cased by the parser
    for key in (name, name.lower()):
        if key in params:
            return float(params[key])
    return DEFAULTS[case][name]


# --------------------------------------------------------------------------
# initial data and closed-form solutions

def initial_max_field(case: Case, params: dict, x_grid: SpatialGrid) -> float:
    """``max |E(0, x)|`` used by the automatic time-step rule."""
    if not case.has_field:
        return 0.0
    E = gauss_initial_E(_param(case, params, "A"), _param(case, params, "kappa"), x_grid)
    return float(np.max(np.abs(E)))


def _isotropic_gaussian(variance: float, v_grid: VelocityGrid, nx: int = 1) -> TensorTrain3:
    mf = build_maxwellian(np.ones(nx), np.zeros((nx, 3)), np.full(nx, variance), v_grid)
    return maxwellian_tt(mf)


def homogeneous_exact(t: float, T0: float, v_grid: VelocityGrid, nx: int = 1) -> TensorTrain3:
    """Relaxation toward the standard Maxwellian: temperature ``1 - (1 - T0) e^{-2t}``."""
    return _isotropic_gaussian(1.0 - (1.0 - T0) * math.exp(-2.0 * t), v_grid, nx)


def heat_exact(t: float, sigma2: float, eta: float, v_grid: VelocityGrid, nx: int = 1) -> TensorTrain3:
    """Free-space heat kernel solution: variance ``sigma2 + 2 eta t`` per direction."""
    return _isotropic_gaussian(sigma2 + 2.0 * eta * t, v_grid, nx)


def exact_solution(cfg: SimConfig, t: float) -> TensorTrain3 | None:
    nx = cfg.x_grid.nx
    if cfg.case is Case.HOMOGENEOUS_FP:
        return homogeneous_exact(t, _param(cfg.case, cfg.case_params, "T0"), cfg.v_grid, nx)
    if cfg.case is Case.HEAT:
        return heat_exact(t, _param(cfg.case, cfg.case_params, "sigma2"), cfg.eta, cfg.v_grid, nx)
    return None


def initial_condition(cfg: SimConfig) -> tuple[TensorTrain3, np.ndarray]:
    """Unpadded initial field (batched over x) and the initial electric field."""
    case, params = cfg.case, cfg.case_params
    v_grid, x_grid = cfg.v_grid, cfg.x_grid
    x = x_grid.nodes
    nx = x_grid.nx
    E = np.zeros(nx)
    if case.is_homogeneous:
        f = exact_solution(cfg, 0.0)
    elif case is Case.INHOMOGENEOUS_FP:
        n0 = (2.0 + np.sin(2.0 * np.pi * x)) / 3.0
        T0 = (3.0 + np.cos(2.0 * np.pi * x)) / 4.0
        u0 = np.zeros((nx, 3))
        u0[:, 0] = _param(case, params, "u1")
        f = maxwellian_tt(build_maxwellian(n0, u0, T0, v_grid))
    elif case is Case.LANDAU_DAMPING:
        A, kappa = _param(case, params, "A"), _param(case, params, "kappa")
        f = _isotropic_gaussian(1.0, v_grid, nx)
        f = TensorTrain3((1.0 + A * np.cos(kappa * x))[:, None, None] * f.core1, f.core2, f.core3)
        E = gauss_initial_E(A, kappa, x_grid)
    else:  # two-stream
        A, kappa = _param(case, params, "A"), _param(case, params, "kappa")
        vs = _param(case, params, "v_star")
        v = v_grid.nodes
        beams = 0.5 * (np.exp(-((v - vs) ** 2) / 2.0) + np.exp(-((v + vs) ** 2) / 2.0))
        g = np.exp(-(v ** 2) / 2.0)
        pre = (1.0 + A * np.cos(kappa * x)) / (2.0 * np.pi) ** 1.5
        f = TensorTrain3(
            pre[:, None, None] * beams[None, :, None],
            np.broadcast_to(g[None, None, :, None], (nx, 1, v_grid.nv, 1)).copy(),
            np.broadcast_to(g[None, None, :], (nx, 1, v_grid.nv)).copy(),
        )
        E = gauss_initial_E(A, kappa, x_grid)
    return f, E


def initial_state(cfg: SimConfig) -> SimState:
    """Initial condition padded to the configured rank, in form I."""
    f, E = initial_condition(cfg)
    f = pad_rank(to_form(f, Form.I), *cfg.rank, seed=cfg.seed)
    U = moments_from_tt(f, cfg.v_grid)
    fields = FieldState(E, current(f, cfg.v_grid))
    return SimState(0.0, f, U, fields)


# --------------------------------------------------------------------------
# factorized norms

def tt_inner(f: TensorTrain3, g: TensorTrain3) -> np.ndarray:
    """``<f, g>`` per batch entry, contracted core by core."""
    a1, a2, a3 = f.general_cores()
    b1, b2, b3 = g.general_cores()
    M = np.swapaxes(a1, -1, -2) @ b1
    t = np.einsum("...ac,...ckd->...akd", M, b2)
    M2 = np.einsum("...akb,...akd->...bd", a2, t)
    return np.einsum("...bd,...bk,...dk->...", M2, a3, b3)


def _norm_squared(f: TensorTrain3) -> float:
    # with cores 2 and 3 right-orthonormal the norm sits in core 1
    c1, _, _ = right_orthonormalize(*f.general_cores())
    return float(np.sum(c1 ** 2))


def relative_error(f: TensorTrain3, ref: TensorTrain3) -> float:
    """``||f - ref||_F / ||ref||_F`` over the whole field, without forming full tensors.

    The difference is orthogonalized before taking its norm, which avoids the
    cancellation of expanding ``<f - ref, f - ref>`` into inner products.
    """
    diff = tt_concat_sum([f, ref.scaled(-1.0)])
    return math.sqrt(_norm_squared(diff) / _norm_squared(ref))


# --------------------------------------------------------------------------
# diagnostics and output files

@dataclass
class DiagnosticsRow:
    t: float
    electric_energy: float
    total_mass: float
    total_momentum_1: float
    total_energy: float
    R1: int
    R2: int
    tt_mass: float
    wall_seconds_cumulative: float

    def values(self) -> list:
        return [getattr(self, c) for c in DIAG_COLUMNS]


def diagnostics_row(state: SimState, cfg: SimConfig, wall: float) -> DiagnosticsRow:
    """Totals from the carried moment vectors; ``tt_mass`` from the tensor train itself."""
    dx = cfg.x_grid.dx
    U = state.U
    ee = electric_energy(state.fields.E1, dx) if cfg.case.has_field else 0.0
    R1, R2 = effective_rank(state.f, cfg.delta)
    tt_mass = float(np.sum(moments_from_tt(state.f, cfg.v_grid)[:, 0]) * dx)
    return DiagnosticsRow(
        t=state.t,
        electric_energy=ee,
        total_mass=float(np.sum(U[:, 0]) * dx),
        total_momentum_1=float(np.sum(U[:, 1]) * dx),
        total_energy=float(np.sum(0.5 * U[:, 4]) * dx) + ee,
        R1=int(np.max(R1)),
        R2=int(np.max(R2)),
        tt_mass=tt_mass,
        wall_seconds_cumulative=wall,
    )


def write_csv(path: Path, columns, rows, comments=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Column names and a float array, skipping ``#`` comment lines.

    Empty cells (an undefined ratio or order) are read as NaN.
    """
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    data = np.array([[float(v) if v else math.nan for v in row] for row in reader if row], dtype=float)
    return header, data.reshape(-1, len(header))


def phase_plane(f: TensorTrain3, v_grid: VelocityGrid) -> np.ndarray:
    """``sum_{k2,k3} f dv^2`` on the (x, v1) grid; shape (Nx, Nv)."""
    c1, c2, c3 = f.general_cores()
    s3 = c3.sum(axis=-1)
    s2 = np.einsum("...akb,...b->...a", c2, s3)
    return v_grid.dv ** 2 * np.einsum("...ka,...a->...k", c1, s2)


def _write_phase(path: Path, f: TensorTrain3, cfg: SimConfig) -> None:
    data = phase_plane(f, cfg.v_grid)
    x, v = cfg.x_grid.nodes, cfg.v_grid.nodes
    rows = ((x[j], v[k], data[j, k]) for j in range(len(x)) for k in range(len(v)))
    write_csv(path, ("x", "v1", "value"), ([float(a), float(b), float(c)] for a, b, c in rows))


def _write_profiles(path: Path, state: SimState, cfg: SimConfig) -> None:
    macro = macro_from_moments(state.U)
    x = cfg.x_grid.nodes
    rows = []
    for j in range(len(x)):
        rows.append([float(x[j]), float(macro.n[j]), *(float(u) for u in macro.u[j]), float(macro.T[j]),
                     float(state.fields.E1[j]), float(state.fields.J1[j])])
    write_csv(path, ("x", "n", "u1", "u2", "u3", "T", "E1", "J1"), rows, comments=[f"t = {state.t!r}"])


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def apply_worker_count() -> int | None:
    """Pin the compiled-kernel thread count from the environment, if set."""
    value = os.environ.get(WORKERS_ENV)
    if not value:
        return None
    import numba

    n = max(1, min(int(value), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def _config_dict(cfg: SimConfig) -> dict:
    d = asdict(cfg)
    d["case"] = cfg.case.value
    d["output_dir"] = str(cfg.output_dir)
    return d


@dataclass
class RunResult:
    status: int
    output_dir: Path
    state: SimState | None
    rows: list[DiagnosticsRow] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    message: str = ""


def simulate(cfg: SimConfig, model: Model | None = None, state: SimState | None = None,
             callback=None) -> SimState:
    """Step from the initial state to ``t_end`` without writing files.

    ``callback(state)`` is invoked after every step.
    """
    model = model or Model.from_config(cfg)
    state = state or initial_state(cfg)
    for _ in range(cfg.nsteps - state.step_index):
        state = time_step(state, model)
        if callback is not None:
            callback(state)
    return state


def run_case(cfg: SimConfig, config_text: str | None = None, log=None) -> RunResult:
    """Run one experiment and write its artifacts; never raises on step failures."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = log or (lambda msg: None)
    workers = apply_worker_count()
    t0 = time.perf_counter()
    model = Model.from_config(cfg)
    state = initial_state(cfg)
    rows = [diagnostics_row(state, cfg, 0.0)]
    energy = [(0.0, rows[0].electric_energy)]
    errors = []
    exact0 = exact_solution(cfg, 0.0)
    if exact0 is not None:
        errors.append((0.0, relative_error(state.f, exact0)))
    artifacts = ["diagnostics.csv", "final_state.tt3", "macro_profiles.csv"]
    pending_phase = sorted(cfg.phase_times)
    if cfg.case.has_field:
        artifacts.append("energy.csv")
        while pending_phase and pending_phase[0] <= 0.5 * cfg.dt:
            name = f"phase_t{pending_phase.pop(0):g}.csv"
            _write_phase(out / name, state.f, cfg)
            artifacts.append(name)

    status, message = 0, ""
    step_wall = 0.0
    try:
        for n in range(1, cfg.nsteps + 1):
            ts = time.perf_counter()
            state = time_step(state, model)
            step_wall += time.perf_counter() - ts
            if cfg.case.has_field:
                energy.append((state.t, electric_energy(state.fields.E1, cfg.x_grid.dx)))
                while pending_phase and pending_phase[0] <= state.t + 0.5 * cfg.dt:
                    name = f"phase_t{pending_phase.pop(0):g}.csv"
                    _write_phase(out / name, state.f, cfg)
                    artifacts.append(name)
            if n % cfg.snapshot_stride == 0 or n == cfg.nsteps:
                rows.append(diagnostics_row(state, cfg, step_wall))
                if exact0 is not None:
                    errors.append((state.t, relative_error(state.f, exact_solution(cfg, state.t))))
                log(f"step {n}/{cfg.nsteps} t={state.t:.6g} mass={rows[-1].total_mass:.12g} "
                    f"R=({rows[-1].R1},{rows[-1].R2})")
    except (StepError, ValueError, FloatingPointError) as exc:
        status, message = 1, f"step {state.step_index + 1} (t = {state.t:.6g}) failed: {exc}"
        log(message)

    write_csv(out / "diagnostics.csv", DIAG_COLUMNS, (r.values() for r in rows),
              comments=[f"schema: {SCHEMA_TAG}", f"case: {cfg.case.value}", f"delta: {cfg.delta!r}"])
    save_snapshot(out / "final_state.tt3", state.f)
    _write_profiles(out / "macro_profiles.csv", state, cfg)
    summary: dict = {"t_final": state.t, "steps": state.step_index}
    if exact0 is not None:
        write_csv(out / "error.csv", ("t", "relative_error"), errors)
        artifacts.append("error.csv")
        summary["relative_error"] = errors[-1][1]
    if cfg.case.has_field:
        write_csv(out / "energy.csv", ("t", "electric_energy"), energy)
        name = "phase_final.csv"
        _write_phase(out / name, state.f, cfg)
        artifacts.append(name)
    wall = time.perf_counter() - t0
    manifest = {
        "status": "ok" if status == 0 else "failed",
        "message": message,
        "config": _config_dict(cfg),
        "config_text": config_text,
        "git_describe": git_describe(),
        "wall_seconds": wall,
        "stepping_seconds": step_wall,
        "workers": workers,
        "artifacts": artifacts + ["manifest.json"],
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return RunResult(status, out, state, rows, summary, message)


# --------------------------------------------------------------------------
# studies

@dataclass
class ConvergenceRow:
    dt: float
    relative_error: float
    observed_order: float | None


def convergence_study(base_cfg: SimConfig, dt_list) -> list[ConvergenceRow]:
    """Final-time relative errors against the closed-form solution for each ``dt``."""
    if not base_cfg.case.is_homogeneous:
        raise ValueError("convergence study needs a case with a closed-form solution")
    rows: list[ConvergenceRow] = []
    for dt in dt_list:
        cfg = replace(base_cfg, dt=float(dt))
        state = simulate(cfg)
        err = relative_error(state.f, exact_solution(cfg, state.t))
        order = None
        if rows:
            prev = rows[-1]
            order = math.log(prev.relative_error / err) / math.log(prev.dt / cfg.dt)
        rows.append(ConvergenceRow(cfg.dt, err, order))
    return rows


def write_convergence(path: Path, rows: list[ConvergenceRow]) -> None:
    write_csv(path, ("dt", "relative_error", "observed_order"),
              ([r.dt, r.relative_error, "" if r.observed_order is None else r.observed_order] for r in rows))


@dataclass
class ScalingRow:
    nv: int
    wall_seconds: float
    ratio: float | None
    dense_seconds: float | None = None


def _time_stepping(cfg: SimConfig) -> float:
    model = Model.from_config(cfg)
    state = initial_state(cfg)
    time_step(state, model)           # compile and warm caches outside the timed loop
    t0 = time.perf_counter()
    for _ in range(cfg.nsteps):
        state = time_step(state, model)
    return time.perf_counter() - t0


def scaling_study(base_cfg: SimConfig, nv_list, repeats: int = 1, with_dense: bool = False) -> list[ScalingRow]:
    """Wall time of the stepping loop only, per velocity resolution (best of ``repeats``)."""
    from .oracle import STRUCTURED_MAX_NV, DenseState, dense_imex_step
    from .tt import tt_to_full

    rows: list[ScalingRow] = []
    g = base_cfg.v_grid
    for nv in nv_list:
        cfg = replace(base_cfg, v_grid=VelocityGrid(g.v_min, g.v_max, int(nv)))
        wall = min(_time_stepping(cfg) for _ in range(max(1, repeats)))
        dense = None
        if with_dense and nv <= STRUCTURED_MAX_NV:
            model = Model.from_config(cfg)
            st0 = initial_state(cfg)
            ds = DenseState(0.0, tt_to_full(st0.f), st0.U, st0.fields.E1)
            t0 = time.perf_counter()
            for _ in range(cfg.nsteps):
                ds = dense_imex_step(ds, model)
            dense = time.perf_counter() - t0
        ratio = wall / rows[-1].wall_seconds if rows else None
        rows.append(ScalingRow(int(nv), wall, ratio, dense))
    return rows


def write_scaling(path: Path, rows: list[ScalingRow], with_dense: bool = False) -> None:
    comments = []
    columns = ["nv", "wall_seconds", "ratio"]
    if with_dense:
        columns.append("dense_seconds")
        skipped = [r.nv for r in rows if r.dense_seconds is None]
        if skipped:
            comments.append(f"dense_seconds omitted for Nv in {skipped}: above the dense oracle cap")
    out = []
    for r in rows:
        row = [r.nv, r.wall_seconds, "" if r.ratio is None else r.ratio]
        if with_dense:
            row.append("" if r.dense_seconds is None else r.dense_seconds)
        out.append(row)
    write_csv(path, columns, out, comments)


class InsufficientPeaksError(ValueError):
    """Too few local maxima to fit a damping rate."""


@dataclass
class FitDiagnostics:
    peak_times: np.ndarray
    peak_values: np.ndarray
    window: tuple[float, float]
    min_separation: float
    residual_rms: float
    slope: float


def damping_fit(t, energy, window: tuple[float, float] | None = None,
                min_peaks: int = 4) -> tuple[float, FitDiagnostics]:
    """Damping rate from successive maxima of the electric energy.

    The energy of a mode ``E ~ e^{gamma t} cos(omega t)`` behaves like
    ``e^{2 gamma t}``, so ``gamma`` is half the least-squares slope of
    ``log`` of the peak values.  Peaks are strict local maxima at least half
    of the spacing of the first two peaks apart.
    """
    t = np.asarray(t, dtype=float)
    e = np.asarray(energy, dtype=float)
    if t.shape != e.shape or t.ndim != 1:
        raise ValueError("t and energy must be 1-D arrays of equal length")
    lo, hi = window if window is not None else (t[0], t[-1])
    sel = (t >= lo) & (t <= hi)
    t, e = t[sel], e[sel]
    if t.size and np.ptp(e) == 0.0:
        empty = np.empty(0)
        return 0.0, FitDiagnostics(empty, empty, (lo, hi), 0.0, 0.0, 0.0)
    idx, _ = scipy.signal.find_peaks(e, plateau_size=(1, 1))
    if idx.size < 2:
        raise InsufficientPeaksError(f"found {idx.size} local maxima in [{lo}, {hi}]")
    min_sep = 0.5 * (t[idx[1]] - t[idx[0]])
    step = float(np.median(np.diff(t)))
    distance = max(1, int(math.floor(min_sep / step)))
    idx, _ = scipy.signal.find_peaks(e, distance=distance, plateau_size=(1, 1))
    if idx.size < min_peaks:
        raise InsufficientPeaksError(f"found {idx.size} separated maxima, need {min_peaks}")
    tp, ep = t[idx], e[idx]
    if np.any(ep <= 0):
        raise InsufficientPeaksError("non-positive peak values cannot be log-fitted")
    slope, intercept = np.polyfit(tp, np.log(ep), 1)
    resid = np.log(ep) - (slope * tp + intercept)
    diag = FitDiagnostics(tp, ep, (float(lo), float(hi)), min_sep, float(np.sqrt(np.mean(resid ** 2))), float(slope))
    return 0.5 * float(slope), diag
