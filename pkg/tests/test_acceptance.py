"""Acceptance criteria, each at its stated scale and tolerance.

One PASS/FAIL line per criterion is printed in the terminal summary.
"""

import os
import time

import numpy as np
import pytest

from rdelab import checks
from rdelab.field import Grid1D
from rdelab.harness import ExperimentConfig, run_sweep
from rdelab.spde import SolverConfig, default_problem

pytestmark = pytest.mark.slow

SEEDS3 = [0, 1, 2]


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    config = ExperimentConfig(output_dir=str(tmp_path_factory.mktemp("sweep")))
    assert config.N == 256 and config.T_pullback == 20.0 and len(config.seeds) >= 8
    start = time.perf_counter()
    result = run_sweep(config, jobs=min(4, os.cpu_count() or 1))
    return config, result, time.perf_counter() - start


def _worst(rows):
    return max(r.value for r in rows)


def test_cocycle_law(criterion):
    spec = default_problem(Grid1D(16.0, 128))
    start = time.perf_counter()
    rows = checks.check_cocycle_law(spec, SolverConfig(1e-3), SEEDS3, eps_list=(0.0, 0.5, 1.0),
                                    T=2.0, n_splits=5, tol=1e-10)
    elapsed = time.perf_counter() - start
    ok = len(rows) == 9 and checks.all_pass(rows) and elapsed < 60
    criterion("cocycle_law", ok, f"max residual {_worst(rows):.2e} <= 1e-10 in {elapsed:.1f}s")
    assert ok


def test_ou_oracle(criterion):
    rows = checks.check_ou_oracle(lam=1.0, t_min=-20.0, t_max=5.0, n_times=20, rtol=1e-3)
    ok = len(rows) == 20 and checks.all_pass(rows)
    criterion("ou_oracle", ok, f"max relative error {_worst(rows):.2e} < 1e-3 at 20 times")
    assert ok


def test_linear_closed_form(criterion):
    rows = checks.check_linear_fixed_point(Grid1D(16.0, 128), 0.01, SEEDS3, T=20.0,
                                           eps_list=checks.DYADIC_EPS)
    spread = [r for r in rows if r.check == "linear_dist_ratio"]
    oracle = [r for r in rows if r.check == "linear_duhamel_oracle"]
    ok = len(spread) == len(oracle) == 3 and checks.all_pass(rows)
    criterion("linear_closed_form", ok, f"ratio spread {_worst(spread):.2e} <= 1e-2, "
              f"oracle error {_worst(oracle):.2e} <= 1e-4")
    assert ok


def test_convergence_slope(criterion):
    spec = default_problem(Grid1D(16.0, 128))
    start = time.perf_counter()
    rows = checks.check_convergence_slope(spec, SolverConfig(1e-3), SEEDS3, T=2.0,
                                          lo=0.8, hi=1.2, eps_list=checks.DYADIC_EPS)
    elapsed = time.perf_counter() - start
    slopes = ", ".join(f"{r.value:.3f}" for r in rows)
    ok = len(rows) == 3 and checks.all_pass(rows) and elapsed < 120
    criterion("convergence_slope", ok, f"slopes [{slopes}] vs [0.8, 1.2] in {elapsed:.1f}s")
    assert ok


def test_upper_semicontinuity(criterion, sweep):
    config, result, elapsed = sweep
    assert not any(r.failed for r in result.rows)
    rows = checks.usc_rows(config.epsilons, result.dist_by_eps(), result.resolution_by_eps(),
                           ratio_bound=0.05)
    med = result.medians()
    ratio = med[min(med)] / med[max(med)]
    ok = checks.all_pass(rows) and elapsed < 600 and len(config.seeds) >= 8
    criterion("upper_semicontinuity", ok, f"median ratio {ratio:.4f} <= 0.05, "
              f"trend rise {rows[0].value:.2e} <= {rows[0].bound_value:.2e}, {elapsed:.0f}s")
    assert ok


def test_uniform_absorption(criterion, sweep):
    config, result, _ = sweep
    rows = checks.check_absorption(config.problem(1.0), config.solver, SEEDS3,
                                   config.T_pullback, result.M, ensemble_count=5)
    ok = len(rows) == 9 and checks.all_pass(rows)
    margin = min(r.value for r in rows)
    bad = sum(not r.pass_flag for r in rows)
    criterion("uniform_absorption", ok, f"{bad} violations, min margin {margin:.3e}")
    assert ok


def test_uniform_tails(criterion, sweep):
    config, result, _ = sweep
    rows = checks.check_tail_uniformity(config.problem(1.0), config.solver, SEEDS3,
                                        config.T_pullback, result.M, eta=1e-4, ensemble_count=5)
    cert = checks.check_precompactness(result.clouds, 1e-2)
    ok = bool(rows) and checks.all_pass(rows) and checks.all_pass(cert)
    bad = sum(not r.pass_flag for r in rows)
    criterion("uniform_tails", ok, f"{bad} tail violations in {len(rows)}, "
              f"certificate max tail {cert[0].value:.2e} <= {cert[0].bound_value:.2e}")
    assert ok


def test_discretization_orders(criterion):
    space = checks.check_spatial_order(lo=1.9, hi=2.1)
    timer = checks.check_temporal_order(lo=0.9, hi=1.1)
    ok = checks.all_pass(space) and checks.all_pass(timer)
    criterion("discretization_orders", ok, "spatial " + ", ".join(f"{r.value:.3f}" for r in space)
              + "; temporal " + ", ".join(f"{r.value:.3f}" for r in timer))
    assert ok


def test_sweep_condition_probes(sweep):
    """The three condition probes are emitted alongside the sweep."""
    _, result, _ = sweep
    conditions = {p["condition"] for p in result.probes}
    assert conditions == {"convergence", "absorbing_radius", "precompactness"}
    radii = {}
    for p in result.probes:
        if p["condition"] == "absorbing_radius":
            radii.setdefault(p["seed"], []).append((p["epsilon"], p["value"]))
    for pairs in radii.values():
        vals = [v for _, v in sorted(pairs)]
        assert np.all(np.diff(vals) >= 0)
