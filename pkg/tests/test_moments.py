import numpy as np
import pytest
from conftest import random_tt, rel
from hypothesis import given
from hypothesis import strategies as st

from imex_tt.domain import Case, SimConfig, SpatialGrid, VelocityGrid
from imex_tt.experiments import initial_condition
from imex_tt.fokker_planck import build_maxwellian, maxwellian_tt
from imex_tt.moments import (
    MacroState,
    macro_from_moments,
    moments_from_macro,
    moments_from_tt,
    transport_moments,
    update_moments,
)
from imex_tt.oracle import dense_moments, dense_transport
from imex_tt.tt import TensorTrain3, tt_to_full


def test_standard_maxwellian_density():
    grid = VelocityGrid(-8, 8, 64)
    f = maxwellian_tt(build_maxwellian(1.0, np.zeros(3), 1.0, grid))
    U = moments_from_tt(f, grid)
    assert abs(U[0] - 1.0) < 1e-10
    assert rel(U, dense_moments(tt_to_full(f), grid)) < 1e-13
    assert U[4] == pytest.approx(3.0, abs=1e-9)


def test_moments_are_linear(rng):
    grid = VelocityGrid(-3, 3, 8)
    f = random_tt(rng, 8, 2, 2)
    assert np.allclose(moments_from_tt(f.scaled(2.0), grid), 2.0 * moments_from_tt(f, grid), rtol=1e-14)


def test_random_matches_dense(rng):
    grid = VelocityGrid(-3, 3, 8)
    f = random_tt(rng, 8, 3, 3)
    assert rel(moments_from_tt(f, grid), dense_moments(tt_to_full(f), grid)) < 1e-12


def test_batched_moments(rng):
    grid = VelocityGrid(-3, 3, 6)
    f = random_tt(rng, 6, 2, 3, batch=(4,))
    U = moments_from_tt(f, grid)
    assert U.shape == (4, 5)
    assert rel(U, dense_moments(tt_to_full(f), grid)) < 1e-12


def test_macro_inversion_examples():
    m = macro_from_moments(np.array([1.0, 0.0, 0.0, 0.0, 3.0]))
    assert (m.n, m.T) == (1.0, 1.0) and not np.any(m.u)
    m = macro_from_moments(np.array([2.0, 0.4, 0.0, 0.0, 6.58]))
    assert m.n == 2.0
    assert np.allclose(m.u, [0.2, 0.0, 0.0], rtol=1e-15)
    assert m.T == pytest.approx((6.58 - 2 * 0.04) / 6, rel=1e-14)
    assert m.T == pytest.approx(1.0833333333333333, rel=1e-14)


def test_macro_inversion_rejects_zero_temperature():
    with pytest.raises(ValueError, match="temperature"):
        macro_from_moments(np.array([1.0, 0.0, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="density"):
        macro_from_moments(np.array([0.0, 0.0, 0.0, 0.0, 1.0]))


@given(st.floats(0.1, 10), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 10))
def test_macro_round_trip(n, u1, u2, u3, T):
    macro = MacroState(np.array(n), np.array([u1, u2, u3]), np.array(T))
    back = macro_from_moments(moments_from_macro(macro))
    assert back.n == pytest.approx(n, rel=1e-12)
    assert np.allclose(back.u, [u1, u2, u3], rtol=1e-10, atol=1e-12)
    assert back.T == pytest.approx(T, rel=1e-10)


# conservative moment update ------------------------------------------------------

def _inhomogeneous_field(nx=16, nv=16):
    cfg = SimConfig(1.0, 0.001, 0.1, (2, 2), VelocityGrid(-6, 6, nv), SpatialGrid(1.0, nx),
                    Case.INHOMOGENEOUS_FP)
    f, _ = initial_condition(cfg)
    return cfg, f


def test_uniform_field_keeps_moments():
    grid, xg = VelocityGrid(-6, 6, 12), SpatialGrid(1.0, 5)
    f = maxwellian_tt(build_maxwellian(np.ones(5), np.tile([0.3, 0, 0], (5, 1)), np.ones(5), grid))
    U = moments_from_tt(f, grid)
    # 3 - 4 + 1 = 0: only rounding of the stencil terms remains
    assert np.allclose(update_moments(U, f, np.zeros(5), 0.1, grid, xg), U, rtol=0, atol=1e-13)


def test_update_matches_dense_transport():
    cfg, f = _inhomogeneous_field()
    U = moments_from_tt(f, cfg.v_grid)
    dense_f = tt_to_full(f)
    expected = dense_moments(dense_f, cfg.v_grid) - 0.001 * dense_moments(
        dense_transport(dense_f, np.zeros(16), cfg.v_grid, cfg.x_grid), cfg.v_grid)
    got = update_moments(U, f, None, 0.001, cfg.v_grid, cfg.x_grid)
    assert rel(got, expected) < 1e-11


def test_update_with_field_matches_dense(rng):
    grid, xg = VelocityGrid(-4, 4, 8), SpatialGrid(2.0, 5)
    f = random_tt(rng, 8, 2, 2, batch=(5,))
    E = rng.standard_normal(5)
    expected = dense_moments(dense_transport(tt_to_full(f), E, grid, xg), grid)
    assert rel(transport_moments(f, E, grid, xg), expected) < 1e-12


@given(st.integers(3, 7), st.integers(0, 2 ** 31 - 1))
def test_x_transport_telescopes(nx, seed):
    rng = np.random.default_rng(seed)
    grid, xg = VelocityGrid(-3, 3, 6), SpatialGrid(1.0, nx)
    f = random_tt(rng, 6, 2, 2, batch=(nx,))
    total = transport_moments(f, None, grid, xg).sum(axis=0)
    scale = np.abs(moments_from_tt(f, grid)).sum() / xg.dx
    assert np.all(np.abs(total) <= 1e-12 * scale)


def test_zero_field_is_zero_tensor():
    grid = VelocityGrid(-3, 3, 4)
    f = TensorTrain3(np.zeros((4, 1)), np.zeros((1, 4, 1)), np.zeros((1, 4)))
    assert not np.any(moments_from_tt(f, grid))
