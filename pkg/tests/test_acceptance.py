"""Acceptance criteria, each run at its stated tolerance.

Every test records one pass/fail line (printed at the end of the session by
``conftest.pytest_terminal_summary``) before asserting.  Long experiment-scale
checks are marked ``slow``; ``pytest -m "not slow"`` skips them.
"""

import math
import time

import numpy as np
import pytest

from imex_tt.domain import Case, SimConfig, SpatialGrid, VelocityGrid, cfl_time_step
from imex_tt.experiments import (
    convergence_study,
    damping_fit,
    initial_condition,
    initial_max_field,
    initial_state,
    scaling_study,
    simulate,
)
from imex_tt.fokker_planck import (
    apply_collision_tt,
    build_collision_tridiag,
    build_maxwellian,
    build_shifted_tridiag,
    collision_tridiags,
    maxwellian_tt,
)
from imex_tt.integrator import Model, SimState, time_step
from imex_tt.moments import macro_from_moments, moments_from_tt
from imex_tt.oracle import (
    DenseState,
    dense_imex_step,
    dense_kronecker_solve,
    dense_projector_splitting_step,
)
from imex_tt.sylvester import solve_matrix_sylvester, solve_tensor_sylvester
from imex_tt.transport import FieldState, current, electric_energy
from imex_tt.tt import Form, effective_rank, pad_rank, to_form, tt_svd, tt_to_full

DT_LIST = [2.0 ** -k for k in range(4, 11)]          # 1/16 ... 1/1024


def _rel(a, b):
    return float(np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b)))


def _orders_ok(rows):
    errors = [r.relative_error for r in rows]
    orders = [r.observed_order for r in rows[1:]]
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    in_band = all(0.8 <= p <= 1.2 for p in orders)
    return monotone and in_band, errors, orders


def _homogeneous(nv, dt=1 / 16, t_end=1.0):
    return SimConfig(1.0, dt, t_end, (5, 5), VelocityGrid(-8, 8, nv), SpatialGrid(1.0, 1), Case.HOMOGENEOUS_FP)


# 1. first-order temporal convergence ---------------------------------------------

@pytest.mark.slow
def test_criterion_1_first_order_convergence(criterion):
    t0 = time.perf_counter()
    rows = convergence_study(_homogeneous(64), DT_LIST)
    ok, errors, orders = _orders_ok(rows)
    detail = (f"Nv=64 errors {['%.3e' % e for e in errors]} orders {['%.2f' % p for p in orders]} "
              f"({time.perf_counter() - t0:.0f} s)")
    assert criterion("1", ok, detail), detail


@pytest.mark.slow
def test_criterion_1_supplementary_fine_velocity_grid(criterion):
    # dv = 1/32 moves the velocity-discretization floor below the temporal error
    rows = convergence_study(_homogeneous(512), DT_LIST)
    ok, errors, orders = _orders_ok(rows)
    detail = f"Nv=512 errors {['%.3e' % e for e in errors]} orders {['%.2f' % p for p in orders]}"
    assert criterion("1 (Nv=512)", ok, detail), detail


# 2. linear scaling in Nv ---------------------------------------------------------------

@pytest.mark.slow
def test_criterion_2_linear_nv_scaling(criterion):
    rows = scaling_study(_homogeneous(128, dt=1 / 512), [128, 256, 512, 1024], repeats=5)
    ratios = [r.ratio for r in rows[1:]]
    ok = all(1.6 <= q <= 2.6 for q in ratios)
    detail = f"seconds {['%.3f' % r.wall_seconds for r in rows]} ratios {['%.2f' % q for q in ratios]}"
    assert criterion("2", ok, detail), detail


# 3. Sylvester correctness ----------------------------------------------------------------

def _shifted(rng, n):
    """Shifted implicit collision matrix for a random Maxwellian and stiffness dt * eta in [1e-4, 1e3].

    The grid spacing is 0.75 whatever ``n``; on much coarser grids the
    Maxwellian ratios in J reach 1e7 and the residual relative to ``R`` stops
    being a meaningful accuracy measure.
    """
    grid = VelocityGrid(-0.375 * n, 0.375 * n, n)
    mf = build_maxwellian(1.0, rng.uniform(-1, 1, 3), rng.uniform(0.5, 2.0), grid)
    J = build_collision_tridiag(mf.m1, float(mf.T), grid.dv)
    return build_shifted_tridiag(J, 1e-3, 10.0 ** rng.uniform(-1, 6))


def _galerkin_small(rng, r, k=12):
    """``Q B^T Q^T`` for a random orthonormal frame of a Kronecker-sum operator of size k^2."""
    B = sum(np.kron(np.kron(np.eye(k ** d), _shifted(rng, k).to_dense()), np.eye(k ** (1 - d)))
            for d in range(2))
    Q = np.linalg.qr(rng.standard_normal((k * k, r)))[0].T
    return Q @ B.T @ Q.T


def test_criterion_3_sylvester_solvers(criterion):
    rng = np.random.default_rng(3)
    worst_res = worst_orc = 0.0
    for _ in range(100):
        n, r = int(rng.integers(2, 65)), int(rng.integers(1, 9))
        A, L = _shifted(rng, n), _galerkin_small(rng, r)
        R = rng.standard_normal((n, r))
        X = solve_matrix_sylvester(A, L, R)
        res = np.linalg.norm(A.to_dense().T @ X + X @ L - R) / np.linalg.norm(R)
        worst_res = max(worst_res, res)
        worst_orc = max(worst_orc, _rel(X, dense_kronecker_solve(A, L, R=R)))
    for _ in range(100):
        n = int(rng.integers(2, 9))
        r1, r2 = int(rng.integers(1, min(4, n) + 1)), int(rng.integers(1, min(4, n) + 1))
        T = _shifted(rng, n)
        P1 = np.linalg.qr(rng.standard_normal((n, r1)))[0]
        Q3 = np.linalg.qr(rng.standard_normal((n, r2)))[0].T
        G = P1.T @ _shifted(rng, n).to_dense() @ P1
        H = Q3 @ _shifted(rng, n).to_dense() @ Q3.T
        R = rng.standard_normal((r1, n, r2))
        X = solve_tensor_sylvester(G, T, H, R)
        resid = (np.einsum("akb,ac->ckb", X, G) + np.einsum("akb,kl->alb", X, T.to_dense())
                 + np.einsum("akb,bc->akc", X, H) - R)
        worst_res = max(worst_res, np.linalg.norm(resid) / np.linalg.norm(R))
        worst_orc = max(worst_orc, _rel(X, dense_kronecker_solve(G, T, H, R=R)))
    ok = worst_res <= 1e-10 and worst_orc <= 1e-10
    detail = f"200 instances: worst residual {worst_res:.2e}, worst oracle gap {worst_orc:.2e}"
    assert criterion("3", ok, detail), detail


# 4. stiff-regime stability ------------------------------------------------------------------

def _stiff(n):
    return SimConfig(1e6, 1e-3, 0.1, (5, 5), VelocityGrid(-6, 6, n), SpatialGrid(1.0, n), Case.INHOMOGENEOUS_FP)


def _profiles(U):
    m = macro_from_moments(U)
    return np.stack([m.n, m.u[:, 0], m.T])


@pytest.mark.slow
def test_criterion_4_stiff_regime(criterion):
    cfg = _stiff(32)
    state = initial_state(cfg)
    norm0 = float(np.sqrt(np.sum(tt_to_full(state.f) ** 2)))
    mass0 = state.U[:, 0].sum()
    norms = []
    state = simulate(cfg, callback=lambda s: norms.append(np.sqrt(np.sum(tt_to_full(s.f) ** 2))))
    bounded = bool(np.all(np.isfinite(norms))) and max(norms) <= 2.0 * norm0
    drift = abs(state.U[:, 0].sum() - mass0) / mass0

    small = _stiff(16)
    tt_state = simulate(small)
    model = Model.from_config(small)
    s0 = initial_state(small)
    ds = DenseState(0.0, tt_to_full(s0.f), s0.U, s0.fields.E1)
    for _ in range(small.nsteps):
        ds = dense_imex_step(ds, model)
    a, b = _profiles(tt_state.U), _profiles(ds.U)
    gaps = [_rel(a[i], b[i]) for i in range(3)]
    ok = bounded and drift <= 1e-10 and max(gaps) <= 0.02
    detail = (f"Nx=Nv=32: max |f| ratio {max(norms) / norm0:.3f}, mass drift {drift:.1e}; "
              f"Nx=Nv=16 profile gaps n/u1/T {gaps[0]:.1e}/{gaps[1]:.1e}/{gaps[2]:.1e}")
    assert criterion("4", ok, detail), detail


# 5. Landau damping rate ----------------------------------------------------------------------

LANDAU_T_END = 15.0


@pytest.mark.slow
def test_criterion_5_landau_damping(criterion):
    vg, xg = VelocityGrid(-9, 9, 64), SpatialGrid(4 * math.pi, 128)
    dt = cfl_time_step(vg, xg, initial_max_field(Case.LANDAU_DAMPING, {}, xg))
    cfg = SimConfig(0.0, dt, LANDAU_T_END, (5, 5), vg, xg, Case.LANDAU_DAMPING)
    t, energy = [0.0], [electric_energy(initial_state(cfg).fields.E1, xg.dx)]

    def track(s):
        t.append(s.t)
        energy.append(electric_energy(s.fields.E1, xg.dx))

    simulate(cfg, callback=track)
    gamma, diag = damping_fit(np.array(t), np.array(energy))
    ok = abs(gamma + 0.151) <= 0.02
    detail = (f"Nv=64 desk scale: gamma = {gamma:.4f} from {diag.peak_times.size} peaks "
              f"(|gamma + 0.151| = {abs(gamma + 0.151):.4f}, desk tolerance 0.02, full-resolution tolerance 0.01)")
    assert criterion("5", ok, detail), detail


# 6. collisional rank decay ---------------------------------------------------------------------

def _two_stream_ranks(eta):
    vg, xg = VelocityGrid(-9, 9, 32), SpatialGrid(2 * math.pi / 0.2, 32)
    dt = cfl_time_step(vg, xg, initial_max_field(Case.TWO_STREAM, {}, xg))
    cfg = SimConfig(eta, dt, 45.0, (8, 8), vg, xg, Case.TWO_STREAM, delta=1e-5)
    times, ranks = [], []

    def track(s):
        if s.step_index % 10 == 0 or s.step_index == cfg.nsteps:
            R1, R2 = effective_rank(s.f, cfg.delta)
            times.append(s.t)
            ranks.append((int(np.max(R1)), int(np.max(R2))))

    simulate(cfg, callback=track)
    return np.array(times), np.array(ranks)


def _non_increasing_after_peak(series):
    k = int(np.argmax(series))
    return bool(np.all(np.diff(series[k:]) <= 0))


@pytest.mark.slow
def test_criterion_6_collisional_rank_decay(criterion):
    t, collisional = _two_stream_ranks(0.05)
    _, free = _two_stream_ranks(0.0)
    decays = all(_non_increasing_after_peak(collisional[:, i]) for i in range(2))
    reaches_one = tuple(collisional[-1]) == (1, 1)
    persists = max(free[-1]) > 1
    ok = decays and reaches_one and persists
    # the second singular value decays while oscillating near the threshold, so the
    # integer rank can flicker by one; count the upward moves after the peak
    total = collisional.sum(axis=1)
    rises = int(np.sum(np.diff(total[int(np.argmax(total)):]) > 0))
    at_one = np.flatnonzero(total == 2)
    first_one = f"{t[at_one[0]]:.1f}" if at_one.size else "never"
    detail = (f"eta=0.05: peak ({collisional[:, 0].max()},{collisional[:, 1].max()}), final "
              f"({collisional[-1, 0]},{collisional[-1, 1]}), non-increasing after peak {decays} "
              f"({rises} upward moves of the rank sum), first (1,1) at t={first_one}; "
              f"eta=0: final ({free[-1, 0]},{free[-1, 1]})")
    assert criterion("6", ok, detail), detail


# 7. equilibrium and conservation invariants ----------------------------------------------------

def _uniform_maxwellian(eta):
    nx, grid = 3, VelocityGrid(-8, 8, 24)
    cfg = SimConfig(eta, 1e-3, 1e-2, (3, 3), grid, SpatialGrid(1.0, nx), Case.INHOMOGENEOUS_FP)
    mf = build_maxwellian(np.full(nx, 1.1), np.tile([0.2, -0.1, 0.0], (nx, 1)), np.full(nx, 0.8), grid)
    f = pad_rank(to_form(maxwellian_tt(mf), Form.I), 3, 3, seed=3)
    state = SimState(0.0, f, moments_from_tt(f, grid), FieldState(np.zeros(nx), np.zeros(nx)))
    return cfg, state


def test_criterion_7_invariants(criterion):
    rng = np.random.default_rng(7)
    drift = {}
    for eta in (0.0, 1.0, 1e6):
        cfg, state = _uniform_maxwellian(eta)
        new = time_step(state, Model.from_config(cfg))
        drift[eta] = _rel(tt_to_full(new.f), tt_to_full(state.f))

    row_sums_zero = True
    kernel = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        m = rng.uniform(0.05, 20.0, n)
        J = build_collision_tridiag(m, rng.uniform(0.05, 20.0), rng.uniform(0.01, 2.0))
        row_sums_zero &= bool(np.all(J.row_sums() == 0.0))
    for _ in range(20):
        grid = VelocityGrid(-6, 6, int(rng.integers(8, 33)))
        u, T = rng.uniform(-0.5, 0.5, 3), rng.uniform(0.6, 1.5)
        f = maxwellian_tt(build_maxwellian(rng.uniform(0.5, 2.0), u, T, grid))
        J = collision_tridiags(u, np.array(T), grid)
        scale = max(np.max(np.abs(j.diag)) for j in J) * np.linalg.norm(tt_to_full(f))
        kernel = max(kernel, np.linalg.norm(apply_collision_tt(f, *J).full()) / scale)

    round_trip = 0.0
    for _ in range(20):
        nv, r1, r2 = int(rng.integers(3, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        f = to_form(tt_svd(rng.standard_normal((2, nv, nv, nv)), r1, r2), Form.I)
        ref = tt_to_full(f)
        g = f
        for form in (Form.II, Form.III, Form.IV, Form.V, Form.I):
            g = to_form(g, form)
            round_trip = max(round_trip, _rel(tt_to_full(g), ref))

    ok = max(drift.values()) <= 1e-10 and row_sums_zero and kernel <= 1e-13 and round_trip <= 1e-12
    detail = (f"Maxwellian drift/step {', '.join(f'eta={k:g}: {v:.1e}' for k, v in drift.items())}; "
              f"J row sums exactly zero {row_sums_zero}; kernel {kernel:.1e}; form cycle {round_trip:.1e}")
    assert criterion("7", ok, detail), detail


# 8. end-to-end oracle equivalence -------------------------------------------------------------

def test_criterion_8_dense_projector_splitting(criterion):
    cfg = SimConfig(1.0, 1e-3, 1e-2, (8, 8), VelocityGrid(-6, 6, 8), SpatialGrid(1.0, 4), Case.INHOMOGENEOUS_FP)
    f0, E = initial_condition(cfg)
    full = tt_to_full(f0)
    # a small non-separable perturbation makes the full-rank representation non-trivial
    full = full + 0.01 * full.max() * np.random.default_rng(8).random(full.shape)
    f = to_form(tt_svd(full), Form.I)
    U = moments_from_tt(f, cfg.v_grid)
    state = SimState(0.0, f, U, FieldState(E, current(f, cfg.v_grid)))
    model = Model.from_config(cfg)
    g, Ug, Eg = f, U, E
    dense = DenseState(0.0, full, U, E)
    worst = 0.0
    for _ in range(10):
        state = time_step(state, model)
        g, Ug, Eg = dense_projector_splitting_step(g, Ug, Eg, model)
        dense = dense_imex_step(dense, model)
        worst = max(worst, _rel(tt_to_full(state.f), tt_to_full(g)))
    imex_gap = _rel(tt_to_full(state.f), dense.f)
    ok = f.ranks == (8, 8) and worst <= 1e-9
    detail = (f"Nx=4, Nv=8, rank (8,8), 10 steps: worst gap to dense projector splitting {worst:.1e} "
              f"(gap to the unsplit dense IMEX step {imex_gap:.1e}, for information)")
    assert criterion("8", ok, detail), detail
