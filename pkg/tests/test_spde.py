import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_banded

from rdelab.checks import check_cocycle_law, check_temporal_order, pullback_path, smooth_state
from rdelab.field import Grid1D, GridMismatchError, laplacian_array, norm_l2
from rdelab.noise import WindowError, sample_path, shift
from rdelab.spde import (Nonlinearity, ProblemSpec, SolverConfig, SolverInstabilityError,
                         bump, cocycle, default_problem, deterministic_flow, f_eval, gaussian,
                         make_profile, step_v, trajectory, trajectory_rows,
                         write_trajectory_csv)


@pytest.fixture(scope="module")
def grid():
    return Grid1D(8.0, 64)


def linear_spec(grid, g=None, h=None, eps=0.0, lam=1.0):
    zero = grid.zeros()
    return ProblemSpec(lam, eps, zero if g is None else g, zero if h is None else h,
                       Nonlinearity.zero(grid))


def direct_solve(grid, lam, g):
    """``(lam - Lap_h)^{-1} g`` by an independent banded solve."""
    r = 1.0 / grid.hx**2
    ab = np.zeros((3, grid.N))
    ab[0, 1:] = -r
    ab[1] = lam + 2 * r
    ab[2, :-1] = -r
    return solve_banded((1, 1), ab, g.values)


# --- nonlinearity ---

def test_f_eval_examples(grid):
    nl = Nonlinearity(1.0, bump(grid, 0.5))
    assert np.all(f_eval(nl, grid.zeros()).values == 0.0)
    nl0 = Nonlinearity(1.0, grid.zeros())
    u = np.zeros(grid.N)
    u[10] = 2.0
    assert f_eval(nl0, grid.field(u)).values[10] == -8.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3), st.floats(-2, 2), st.integers(0, 2**31))
def test_f_eval_odd(a, b_amp, seed):
    grid = Grid1D(4.0, 31)
    nl = Nonlinearity(a, bump(grid, b_amp))
    u = grid.field(np.random.default_rng(seed).normal(size=31))
    assert np.allclose(f_eval(nl, -u).values, -f_eval(nl, u).values, rtol=0, atol=1e-12)


def test_f_eval_grid_mismatch(grid):
    nl = Nonlinearity(1.0, grid.zeros())
    with pytest.raises(GridMismatchError):
        f_eval(nl, Grid1D(8.0, 32).zeros())


def test_structure_conditions(grid):
    nl = Nonlinearity(1.3, bump(grid, 0.7))
    s = np.linspace(-5, 5, 401)[:, None]
    f = -nl.a * s**3 + nl.b.values * s
    dfds = -3 * nl.a * s**2 + nl.b.values
    assert np.all(f * s <= -nl.alpha1 * s**4 + nl.psi1 + 1e-12)
    assert np.all(np.abs(f) <= nl.alpha2 * np.abs(s) ** 3 + nl.psi2 + 1e-12)
    assert np.all(dfds <= nl.beta + 1e-12)
    assert np.all(np.abs(dfds) <= nl.alpha3 * s**2 + nl.psi4 + 1e-12)
    assert np.all(nl.psi3(5.0) >= 0)


def test_nonlinearity_validation(grid):
    with pytest.raises(ValueError):
        Nonlinearity(-1.0, grid.zeros())
    with pytest.raises(ValueError):
        Nonlinearity(0.0, bump(grid, 1.0))
    with pytest.raises(ValueError):
        Nonlinearity(1.0, gaussian(grid, 1.0, 1.0))   # not compactly supported


def test_problem_validation(grid):
    with pytest.raises(ValueError):
        linear_spec(grid, lam=0.0)
    with pytest.raises(ValueError):
        linear_spec(grid, eps=1.5)
    with pytest.raises(GridMismatchError):
        linear_spec(grid, h=Grid1D(8.0, 32).zeros())
    with pytest.raises(ValueError):
        SolverConfig(0.0)


def test_make_profile(grid):
    assert make_profile(grid, None) == grid.zeros()
    assert np.all(make_profile(grid, 0.5).values == 0.5)
    g = make_profile(grid, {"kind": "gaussian", "amplitude": 2.0, "width": 1.0})
    assert g == gaussian(grid, 2.0, 1.0)


# --- step_v ---

@pytest.mark.parametrize("k", [1, 3, 7])
def test_step_eigen_identity(grid, k):
    spec, cfg = linear_spec(grid), SolverConfig(0.01)
    z = grid.zeros()
    v = grid.mode(k)
    out = step_v(spec, cfg, v, z, z)
    factor = 1.0 / (1.0 + cfg.dt * (spec.lam - grid.mode_eigenvalue(k)))
    assert np.allclose(out.values, factor * v.values, rtol=0, atol=1e-13)


def test_step_zero_fixed_point(grid):
    spec = ProblemSpec(1.0, 0.0, grid.zeros(), grid.zeros(), Nonlinearity(1.0, grid.zeros()))
    z = grid.zeros()
    assert step_v(spec, SolverConfig(0.01), z, z, z) == z


def test_step_matches_definition(grid):
    spec = default_problem(grid, epsilon=0.5)
    cfg = SolverConfig(0.01)
    v = smooth_state(grid, 0)
    z = spec.h * 0.3
    zl = grid.field(laplacian_array(z.values.copy(), grid.hx))
    out = step_v(spec, cfg, v, z, zl)
    # residual of (I + dt(lam - Lap)) v+ = rhs
    lhs = out.values + cfg.dt * (spec.lam * out.values - laplacian_array(out.values.copy(), grid.hx))
    u = v.values + 0.5 * z.values
    rhs = v.values + cfg.dt * (spec.nonlin(u) + spec.g.values + 0.5 * zl.values)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-13)


def test_heat_check_first_order():
    rows = check_temporal_order()
    assert all(r.pass_flag for r in rows), [r.value for r in rows]


def test_instability_abort(grid):
    spec = ProblemSpec(1.0, 0.0, grid.zeros(), grid.zeros(), Nonlinearity(1.0, grid.zeros()))
    big = grid.field(np.full(grid.N, 100.0))
    with pytest.raises(SolverInstabilityError, match="reduce dt"):
        deterministic_flow(spec, SolverConfig(0.01), 0.1, big)


# --- cocycle ---

def test_cocycle_at_zero(grid):
    spec = default_problem(grid)
    u0 = smooth_state(grid, 1)
    omega = sample_path(0, 0.01, -40.0, 1.0)
    assert cocycle(spec, SolverConfig(0.01), 0.0, omega, u0) == u0


def test_eps_zero_independent_of_omega(grid):
    spec = default_problem(grid, epsilon=0.0)
    cfg = SolverConfig(0.01)
    u0 = smooth_state(grid, 2)
    a = cocycle(spec, cfg, 1.0, sample_path(0, 0.01, -40.0, 2.0), u0)
    b = cocycle(spec, cfg, 1.0, sample_path(9, 0.01, -40.0, 2.0), u0)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(deterministic_flow(spec, cfg, 1.0, u0).values, a.values)


def test_cocycle_law_small(grid):
    rows = check_cocycle_law(default_problem(grid), SolverConfig(0.01), [0, 1], T=1.0)
    assert all(r.pass_flag for r in rows)
    assert max(r.value for r in rows) <= 1e-10


def test_cocycle_decomposition_explicit(grid):
    spec = default_problem(grid, epsilon=0.7)
    cfg = SolverConfig(0.01)
    omega = sample_path(3, 0.01, -40.0, 2.0)
    u0 = smooth_state(grid, 3)
    whole = cocycle(spec, cfg, 1.5, omega, u0)
    mid = cocycle(spec, cfg, 0.6, omega, u0)
    parts = cocycle(spec, cfg, 0.9, shift(omega, 0.6), mid)
    assert norm_l2(whole - parts) <= 1e-10


def test_cocycle_window_exhausted(grid):
    spec = default_problem(grid)
    omega = sample_path(0, 0.01, -40.0, 1.0)
    with pytest.raises(WindowError):
        cocycle(spec, SolverConfig(0.01), 2.0, omega, grid.zeros())


def test_cocycle_dt_mismatch(grid):
    spec = default_problem(grid)
    omega = sample_path(0, 0.02, -40.0, 1.0)
    with pytest.raises(ValueError):
        cocycle(spec, SolverConfig(0.01), 0.5, omega, grid.zeros())


def test_cocycle_requires_path(grid):
    with pytest.raises(ValueError):
        cocycle(default_problem(grid), SolverConfig(0.01), 0.5, None, grid.zeros())


# --- deterministic flow ---

def test_linear_flow_converges_to_direct_solve():
    grid = Grid1D(16.0, 128)
    g = gaussian(grid, 1.0, 1.0)
    spec = linear_spec(grid, g=g)
    u_star = direct_solve(grid, spec.lam, g)
    u0 = smooth_state(grid, 0, norm=3.0)
    T = 10.0
    uT = deterministic_flow(spec, SolverConfig(0.01), T, u0)
    d0 = math.sqrt(grid.hx) * np.linalg.norm(u0.values - u_star)
    dT = math.sqrt(grid.hx) * np.linalg.norm(uT.values - u_star)
    assert dT <= math.exp(-spec.lam * T) * d0


def test_cubic_flow_monotone_dissipation(grid):
    spec = ProblemSpec(1.0, 0.0, grid.zeros(), grid.zeros(), Nonlinearity(1.0, grid.zeros()))
    u0 = smooth_state(grid, 4, norm=2.0)
    norms = [row[1] for row in trajectory_rows(spec, SolverConfig(0.005), 3.0, None, u0)]
    assert np.all(np.diff(norms) < 0)
    assert norms[-1] <= math.exp(-3.0) * norms[0]


def test_continuity_in_initial_data(grid):
    """Growth rate of a perturbation is stable when the perturbation is halved."""
    spec = default_problem(grid, epsilon=0.0)
    cfg = SolverConfig(0.005)
    u0 = smooth_state(grid, 5, norm=1.0)
    d = smooth_state(grid, 6, norm=0.1)

    def rate(delta):
        traj_a = [v for _, v, _ in trajectory(spec, cfg, 2.0, None, u0.values)]
        traj_b = [v for _, v, _ in trajectory(spec, cfg, 2.0, None, (u0 + delta).values)]
        ratios = [np.linalg.norm(x - y) / np.linalg.norm(delta.values)
                  for x, y in zip(traj_a[1:], traj_b[1:])]
        times = np.arange(1, len(ratios) + 1) * cfg.dt
        return max(math.log(r) / t for r, t in zip(ratios, times))

    c1, c2 = rate(d), rate(d * 0.5)
    assert math.isfinite(c1)
    assert c2 == pytest.approx(c1, rel=0.1, abs=0.05)


def test_trajectory_csv(grid, tmp_path):
    spec = default_problem(grid, epsilon=0.5)
    omega = sample_path(0, 0.01, -40.0, 1.0)
    rows = trajectory_rows(spec, SolverConfig(0.01), 1.0, omega, grid.zeros(), every=10)
    assert len(rows) == 11 and rows[0][0] == 0.0 and rows[-1][0] == pytest.approx(1.0)
    dest = tmp_path / "traj.csv"
    write_trajectory_csv(rows, dest)
    out = list(csv.reader(open(dest)))
    assert out[0] == ["t", "l2", "h1_semi", "lp_p", "tail_mass"]
    assert len(out) == 12


def test_pullback_path_window():
    om = pullback_path(0, 0.01, 20.0, 2.0, 1.0)
    assert om.t_min <= -50.0 and om.t_max >= 2.0
