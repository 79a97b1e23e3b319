"""Verification checks shared by ``rdelab verify`` and the acceptance tests.

Every check returns :class:`CheckRow` records; a check passes when all of
its rows do.  Oracles used here (quadrature, spectral Duhamel sums, closed
forms) are computed independently of the stepping code they audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import integrate

from rdelab import attractor as att
from rdelab.estimates import (convergence_check, convergence_coefficient, energy_reports,
                              fit_bound, loglog_slope, smallest_tail_radius, tail_report)
from rdelab.field import Field, Grid1D, inner, laplacian, norm_h1_semi
from rdelab.noise import WienerPath, ou_from_path, sample_path, shift
from rdelab.spde import (Nonlinearity, ProblemSpec, SolverConfig, cocycle, cocycle_array,
                         step_v)

DYADIC_EPS = tuple(2.0**-k for k in range(1, 7))
CALIB_EPS = (0.0, 1.0)
INTERMEDIATE_EPS = (0.5, 0.25, 0.125)


@dataclass
class CheckRow:
    check: str
    quantity_name: str
    value: float
    bound_value: float
    pass_flag: bool
    epsilon: float | None = None
    seed: int | None = None
    t: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def all_pass(rows: Sequence[CheckRow]) -> bool:
    return bool(rows) and all(r.pass_flag for r in rows)


def pullback_path(seed: int, dt: float, back: float, forward: float, lam: float,
                  margin: float = 30.0) -> WienerPath:
    """Path covering ``[-back, forward]`` plus enough history for the OU truncation."""
    return sample_path(seed, dt, -(back + margin / lam), max(forward, 0.0) + dt)


def smooth_state(grid: Grid1D, seed: int, norm: float = 1.0) -> Field:
    ball = att.AbsorbingBall(norm, 0.0, 0.0)
    return att.seed_ensemble(ball, grid, 2, seed)[1]


# --- noise --------------------------------------------------------------------

def ou_quadrature(path: WienerPath, lam: float, t: float) -> float:
    """Adaptive-quadrature value of ``-lam int e^{lam tau} (theta_t omega)(tau) dtau``.

    Left of the window the path is held at ``omega(t_min)``, which contributes
    the closed-form term ``-(omega(t_min) - omega(t)) e^{lam (t_min - t)}``.
    """
    wt = path(t)
    a = path.t_min - t

    def integrand(tau):
        return math.exp(lam * tau) * (path(tau + t) - wt)

    # kinks of the piecewise-linear integrand sit on the path nodes
    kinks = path.times - t
    edges = np.unique(np.concatenate([np.arange(0.0, a, -1.0), [a]]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        inside = kinks[(kinks > lo) & (kinks < hi)]
        val, _ = integrate.quad(integrand, lo, hi, points=inside, limit=4 * len(inside) + 50,
                                epsabs=1e-12, epsrel=1e-10)
        total += val
    return -lam * total - (path(path.t_min) - wt) * math.exp(lam * a)


def check_ou_oracle(seed: int = 11, lam: float = 1.0, t_min: float = -20.0, t_max: float = 5.0,
                    dt: float = 0.01, n_times: int = 20, rtol: float = 1e-3) -> list[CheckRow]:
    path = sample_path(seed, dt, t_min, t_max)
    ou = ou_from_path(path, lam, trunc_tol=1.01 * math.exp(lam * t_min))
    rng = np.random.default_rng(seed)
    ks = np.sort(rng.choice(len(path.nodes), n_times, replace=False))
    rows = []
    for k in ks:
        t = float(path.times[k])
        ref = ou_quadrature(path, lam, t)
        err = abs(ou.y_values[k] - ref) / abs(ref)
        rows.append(CheckRow("ou_oracle", "relative_error", err, rtol, err < rtol, seed=seed, t=t))
    return rows


def check_ou_stationarity(seed: int = 3, lam: float = 1.0, dt: float = 0.01,
                          shifts: Sequence[float] = (-5.0, 2.0), tol: float = 1e-9) -> list[CheckRow]:
    path = sample_path(seed, dt, -60.0, 5.0)
    base = ou_from_path(path, lam)
    rows = []
    for s in shifts:
        sh = ou_from_path(shift(path, s), lam)
        taus = sh.times[(sh.times + s >= path.t_min) & (sh.times + s <= path.t_max)]
        err = max(abs(sh.y(tau) - base.y(tau + s)) for tau in taus[::50])
        rows.append(CheckRow("ou_stationarity", "max_abs_diff", err, tol, err <= tol,
                             seed=seed, t=s))
    return rows


def check_tempered_bound(seeds: Sequence[int] = (0, 1, 2), lam: float = 1.0, p: float = 4.0,
                         dt: float = 0.01) -> list[CheckRow]:
    rows = []
    for seed in seeds:
        ou = ou_from_path(sample_path(seed, dt, -40.0, 10.0), lam, p)
        lhs = ou.y_values**2 + np.abs(ou.y_values) ** p
        env = ou.tempered_envelope()
        slack = float(np.min(env - lhs))
        tight = bool(np.any(np.isclose(lhs, env, rtol=1e-12, atol=0.0)))
        rows.append(CheckRow("tempered_bound", "min_slack", slack, 0.0,
                             slack >= -1e-12 * ou.r_hat and tight, seed=seed))
    return rows


# --- discretisation -----------------------------------------------------------

def observed_orders(errors: Sequence[float]) -> list[float]:
    return [math.log2(e1 / e2) for e1, e2 in zip(errors[:-1], errors[1:])]


def check_spatial_order(L: float = 1.0, Ns: Sequence[int] = (31, 63, 127), k: int = 3,
                        lo: float = 1.9, hi: float = 2.1) -> list[CheckRow]:
    """Discrete Laplacian of the continuous eigenmode vs its exact second derivative."""
    errs = []
    for N in Ns:
        grid = Grid1D(L, N)
        kk = k * math.pi / (2 * L)
        phi = grid.mode(k)
        exact = -kk**2 * phi.values
        errs.append(float(np.max(np.abs(laplacian(phi).values - exact))))
    return [CheckRow("spatial_order", f"order_{i}", q, 2.0, lo <= q <= hi)
            for i, q in enumerate(observed_orders(errs))]


def check_temporal_order(N: int = 63, L: float = 1.0, lam: float = 1.0, k: int = 1,
                         T: float = 1.0, dts: Sequence[float] = (0.01, 0.005, 0.0025),
                         lo: float = 0.9, hi: float = 1.1) -> list[CheckRow]:
    """Semi-implicit decay of a discrete eigenmode vs ``exp(-(lam + |mu_k|) T)``."""
    grid = Grid1D(L, N)
    zero = grid.zeros()
    spec = ProblemSpec(lam, 0.0, zero, zero, Nonlinearity.zero(grid))
    mode = grid.mode(k)
    rate = lam - grid.mode_eigenvalue(k)
    errs = []
    for dt in dts:
        v = mode
        cfg = SolverConfig(dt)
        for _ in range(round(T / dt)):
            v = step_v(spec, cfg, v, zero, zero)
        errs.append(float(np.max(np.abs(v.values - math.exp(-rate * T) * mode.values))))
    return [CheckRow("temporal_order", f"order_{i}", q, 1.0, lo <= q <= hi)
            for i, q in enumerate(observed_orders(errs))]


def check_summation_by_parts(grid: Grid1D = Grid1D(4.0, 64), seed: int = 0,
                             rtol: float = 1e-12) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    f, g = (Field(grid, rng.standard_normal(grid.N)) for _ in range(2))
    a, b = inner(laplacian(f), g), inner(f, laplacian(g))
    sym = abs(a - b) / max(abs(a), abs(b))
    c, d = -inner(laplacian(f), f), norm_h1_semi(f) ** 2
    energy = abs(c - d) / d
    return [CheckRow("summation_by_parts", "symmetry", sym, rtol, sym <= rtol),
            CheckRow("summation_by_parts", "energy", energy, rtol, energy <= rtol)]


# --- cocycle ------------------------------------------------------------------

def check_cocycle_law(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int],
                      eps_list: Sequence[float] = (0.0, 0.5, 1.0), T: float = 2.0,
                      n_splits: int = 5, tol: float = 1e-10) -> list[CheckRow]:
    n = round(T / cfg.dt)
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, 0.0, T, spec.lam)
        u0 = smooth_state(spec.grid, seed)
        rng = np.random.default_rng([seed, 7])
        splits = rng.integers(1, n, size=n_splits)
        for eps in eps_list:
            sp = spec.with_epsilon(eps)
            whole = cocycle(sp, cfg, T, omega, u0).values
            worst = 0.0
            for k in splits:
                s = int(k) * cfg.dt
                mid = cocycle(sp, cfg, s, omega, u0)
                composed = cocycle(sp, cfg, (n - int(k)) * cfg.dt, shift(omega, s), mid).values
                worst = max(worst, math.sqrt(spec.grid.hx) * float(np.linalg.norm(whole - composed)))
            rows.append(CheckRow("cocycle_law", "max_residual", worst, tol, worst <= tol,
                                 epsilon=eps, seed=seed, t=T))
    return rows


# --- linear problem -----------------------------------------------------------

def linear_fixed_point_oracle(spec: ProblemSpec, dt: float, omega: WienerPath,
                              T: float) -> np.ndarray:
    """Random fixed point of the f = 0 scheme by a spectral discrete-Duhamel sum.

    In the Dirichlet sine basis the implicit step is diagonal with factor
    ``r_k = 1 / (1 + dt (lam - mu_k))``, so the pullback image of any state
    from time ``-T`` is ``(lam - Lap)^-1 g`` plus ``eps`` times
    ``z_n + sum_j dt r^j Lap z_{n-j} - r^n z_0`` up to terms of size ``r^n``.
    """
    grid = spec.grid
    N, hx = grid.N, grid.hx
    idx = np.arange(1, N + 1)
    S = np.sin(np.pi * np.outer(idx, idx) / (N + 1))
    mu = -(4.0 / hx**2) * np.sin(idx * np.pi / (2 * (N + 1))) ** 2
    to_hat = lambda v: (2.0 / (N + 1)) * (S @ v)
    g_hat, h_hat = to_hat(spec.g.values), to_hat(spec.h.values)
    n = round(T / dt)
    start = omega.origin - n
    y = ou_from_path(omega, spec.lam, spec.nonlin.p).y_values[start:omega.origin + 1]
    r = 1.0 / (1.0 + dt * (spec.lam - mu))
    j = np.arange(1, n + 1)
    powers = r[None, :] ** j[:, None]                        # (n, N)
    conv = dt * (powers * y[n - j][:, None]).sum(axis=0)     # sum_j dt r^j y_{n-j}
    w_hat = h_hat * (y[n] + mu * conv - r**n * y[0])
    u_hat = g_hat / (spec.lam - mu) + spec.epsilon * w_hat
    return S @ u_hat


def check_linear_fixed_point(grid: Grid1D, dt: float, seeds: Sequence[int], T: float = 20.0,
                             eps_list: Sequence[float] = DYADIC_EPS, lam: float = 1.0,
                             ensemble_count: int = 3, ratio_tol: float = 0.01,
                             oracle_rtol: float = 1e-4) -> list[CheckRow]:
    from rdelab.spde import gaussian
    spec = ProblemSpec(lam, 1.0, gaussian(grid, 1.0, 1.0), gaussian(grid, 1.0, 1.0),
                       Nonlinearity.zero(grid))
    cfg = SolverConfig(dt)
    ens = att.seed_ensemble(att.AbsorbingBall(2.0, 0.0, 0.0), grid, ensemble_count, 0)
    A0 = att.global_attractor(spec, cfg, T, ens)
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, dt, T, 0.0, lam)
        ratios, worst = [], 0.0
        for eps in eps_list:
            sp = spec.with_epsilon(eps)
            cloud = att.pullback_attractor(sp, cfg, omega, T, ens)
            ratios.append(att.hausdorff_semidist(cloud, A0) / eps)
            oracle = linear_fixed_point_oracle(sp, dt, omega, T)
            rel = float(np.max(np.linalg.norm(cloud.points - oracle, axis=1))
                        / np.linalg.norm(oracle))
            worst = max(worst, rel)
        spread = (max(ratios) - min(ratios)) / float(np.mean(ratios))
        rows.append(CheckRow("linear_dist_ratio", "relative_spread", spread, ratio_tol,
                             spread <= ratio_tol, seed=seed, t=T))
        rows.append(CheckRow("linear_duhamel_oracle", "max_relative_error", worst, oracle_rtol,
                             worst <= oracle_rtol, seed=seed, t=T))
    return rows


# --- estimates ----------------------------------------------------------------

def _energy_table(spec, cfg, seeds, horizons, eps_values, ensemble, lam):
    U0 = np.array([f.values for f in ensemble])
    table = {}
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, max(horizons), 0.0, lam)
        for eps in eps_values:
            for t in horizons:
                table[seed, eps, t] = energy_reports(spec.with_epsilon(eps), cfg, omega, t, U0)
    return table


def check_energy_bounds(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int],
                        horizons: Sequence[float], M: float, ensemble_count: int = 5
                        ) -> list[CheckRow]:
    """Fit-then-freeze checks for |v|^2 (with decay term), |u|^2 and |grad v|^2."""
    ensemble = att.seed_ensemble(att.AbsorbingBall(M, 0.0, 0.0), spec.grid, ensemble_count, 1)
    table = _energy_table(spec, cfg, seeds, horizons, CALIB_EPS + INTERMEDIATE_EPS,
                          ensemble, spec.lam)
    quantities = {
        "v_energy_bound": lambda r: (r.v_norm_sq, r.decay_term),
        "absorption_bound": lambda r: (r.u_norm_sq, 0.0),
        "gradient_bound": lambda r: (r.grad_norm_sq, 0.0),
    }
    rows = []
    for name, get in quantities.items():
        calib0 = [get(r) for (s, e, t), reps in table.items() if e == 0.0 for r in reps]
        calib1 = [get(r) + (r.r_hat,) for (s, e, t), reps in table.items() if e == 1.0
                  for r in reps]
        fitted = fit_bound(calib0, calib1)
        for (seed, eps, t), reps in table.items():
            if eps not in INTERMEDIATE_EPS:
                continue
            viol, margin = 0, math.inf
            for r in reps:
                val, dec = get(r)
                b = fitted.bound(eps, r.r_hat, dec)
                margin = min(margin, b - val)
                viol += val > b
            rows.append(CheckRow(name, "min_margin", margin, 0.0, viol == 0,
                                 epsilon=eps, seed=seed, t=t))
    return rows


def check_absorption(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int], T: float,
                     M: float, ensemble_count: int = 5) -> list[CheckRow]:
    """|u(T, theta_{-T} omega, u0)|^2 <= M1 + eps M2 r_hat with (M1, M2) frozen at eps in {0, 1}."""
    return [r for r in check_energy_bounds(spec, cfg, seeds, (T,), M, ensemble_count)
            if r.check == "absorption_bound"]


def check_tail_uniformity(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int], T: float,
                          M: float, eta: float = 1e-4, n_radii: int = 65,
                          ensemble_count: int = 5) -> list[CheckRow]:
    grid = spec.grid
    radii = np.linspace(0.0, grid.L, n_radii)
    ensemble = att.seed_ensemble(att.AbsorbingBall(M, 0.0, 0.0), grid, ensemble_count, 2)
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, T, 0.0, spec.lam)
        for i, u0 in enumerate(ensemble):
            masses = tail_report(spec.with_epsilon(1.0), cfg, omega, T, u0, radii)
            R1 = smallest_tail_radius(masses, eta)
            if R1 is None:
                rows.append(CheckRow("tail_uniformity", "tail_at_L", masses[grid.L],
                                     eta, False, epsilon=1.0, seed=seed, t=T))
                continue
            for eps in INTERMEDIATE_EPS:
                m = tail_report(spec.with_epsilon(eps), cfg, omega, T, u0, [R1])[R1]
                rows.append(CheckRow("tail_uniformity", f"tail_member{i}_R{R1:g}", m,
                                     eta, m < eta, epsilon=eps, seed=seed, t=T))
    return rows


def convergence_sups(spec: ProblemSpec, cfg: SolverConfig, omega: WienerPath, T: float,
                     u0: Field, eps_list: Sequence[float] = DYADIC_EPS):
    spec0 = spec.with_epsilon(0.0)
    return [convergence_check((spec.with_epsilon(e), spec0), cfg, omega, T, u0, u0)
            for e in eps_list]


def check_convergence_slope(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int],
                            T: float = 2.0, lo: float = 0.8, hi: float = 1.2,
                            eps_list: Sequence[float] = DYADIC_EPS) -> list[CheckRow]:
    """Log-log slope of ``sup_t |u^eps - u^0|^2`` against eps, required in ``[lo, hi]``."""
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, 0.0, T, spec.lam)
        u0 = smooth_state(spec.grid, seed)
        curves = convergence_sups(spec, cfg, omega, T, u0, eps_list)
        slope = loglog_slope(eps_list, [c.sup for c in curves])
        rows.append(CheckRow("convergence_slope", "loglog_slope_sq_error", slope, hi,
                             lo <= slope <= hi, seed=seed, t=T))
    return rows


def check_convergence_bound(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int],
                            T: float = 2.0, min_slope: float = 0.8,
                            eps_list: Sequence[float] = DYADIC_EPS) -> list[CheckRow]:
    """The eps-linear upper bound: the squared error decays at least like eps."""
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, 0.0, T, spec.lam)
        u0 = smooth_state(spec.grid, seed)
        curves = convergence_sups(spec, cfg, omega, T, u0, eps_list)
        sups = [c.sup for c in curves]
        slope = loglog_slope(eps_list, sups)
        C = convergence_coefficient(curves, u0, u0)
        rows.append(CheckRow("convergence_bound", "loglog_slope_sq_error", slope, min_slope,
                             slope >= min_slope, seed=seed, t=T))
        rows.append(CheckRow("convergence_bound", "fitted_coefficient", C, math.inf,
                             math.isfinite(C), seed=seed, t=T))
    return rows


def check_convergence_robustness(spec: ProblemSpec, cfg: SolverConfig, seed: int,
                                 T: float = 2.0, ensemble_count: int = 3,
                                 rtol: float = 0.2) -> list[CheckRow]:
    """Fitted bound coefficient is stable under ensemble doubling plus dt halving."""
    def coeff(count, dt):
        c = SolverConfig(dt)
        omega = pullback_path(seed, dt, 0.0, T, spec.lam)
        best = 0.0
        for i in range(count):
            u0 = smooth_state(spec.grid, 100 + i)
            best = max(best, convergence_coefficient(
                convergence_sups(spec, c, omega, T, u0), u0, u0))
        return best

    base = coeff(ensemble_count, cfg.dt)
    fine = coeff(2 * ensemble_count, cfg.dt / 2)
    rel = abs(fine - base) / base
    return [CheckRow("convergence_robustness", "relative_change", rel, rtol, rel <= rtol, seed=seed)]


# --- attractors ---------------------------------------------------------------

def check_resolution_decreasing(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int],
                                M: float, Ts: Sequence[float] = (5.0, 10.0, 20.0),
                                ensemble_count: int = 5) -> list[CheckRow]:
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, max(Ts), 0.0, spec.lam)
        r_hat = ou_from_path(omega, spec.lam, spec.nonlin.p).r_hat
        ball = att.AbsorbingBall(M, spec.epsilon, r_hat)
        res = [att.pullback_attractor(spec, cfg, omega, T, ensemble_count, ball=ball,
                                      seed=seed).resolution for T in Ts]
        ok = all(b < a for a, b in zip(res[:-1], res[1:]))
        rows.append(CheckRow("pullback_resolution", "resolution_at_max_T", res[-1], res[0], ok,
                             epsilon=spec.epsilon, seed=seed, t=max(Ts)))
    return rows


def check_invariance(spec: ProblemSpec, cfg: SolverConfig, seeds: Sequence[int], T: float,
                     M: float, shifts: Sequence[float] = (1.0, 2.0), ensemble_count: int = 5,
                     factor: float = 3.0) -> list[CheckRow]:
    rows = []
    for seed in seeds:
        omega = pullback_path(seed, cfg.dt, T, max(shifts), spec.lam)
        r_hat = ou_from_path(omega, spec.lam, spec.nonlin.p).r_hat
        ball = att.AbsorbingBall(M, spec.epsilon, r_hat)
        ens = att.seed_ensemble(ball, spec.grid, ensemble_count, seed)
        A = att.pullback_attractor(spec, cfg, omega, T, ens)
        for s in shifts:
            moved = cocycle_array(spec, cfg, s, omega, A.points)
            image = att.AttractorCloud(spec.grid, moved, T + s)
            target = att.pullback_attractor(spec, cfg, shift(omega, s), T, ens)
            d = att.hausdorff_semidist(image, target)
            bound = factor * max(A.resolution, target.resolution)
            rows.append(CheckRow("invariance", "dist_image_to_shifted", d, bound, d <= bound,
                                 epsilon=spec.epsilon, seed=seed, t=s))
    return rows


def check_precompactness(clouds: Sequence[att.AttractorCloud], eta: float) -> list[CheckRow]:
    rep = att.union_precompactness_probe(list(clouds), eta)
    return [CheckRow("precompactness", "max_tail_mass", rep.max_tail, rep.tail_threshold,
                     rep.passed, t=rep.R),
            CheckRow("precompactness", "net_size", rep.net_size, rep.n_points,
                     rep.net_size <= rep.n_points)]


def usc_rows(epsilons: Sequence[float], dist_by_eps: dict, res_by_eps: dict,
             ratio_bound: float = 0.05) -> list[CheckRow]:
    """Median trend and smallest-vs-largest ratio for the eps-sweep."""
    eps_desc = sorted(epsilons, reverse=True)
    med = [float(np.median(dist_by_eps[e])) for e in eps_desc]
    noise = 2.0 * max(max(res_by_eps[e]) for e in eps_desc)
    worst_rise = max([b - a for a, b in zip(med[:-1], med[1:])] + [-math.inf])
    ratio = med[-1] / med[0]
    return [
        CheckRow("usc_trend", "max_median_increase", worst_rise, noise, worst_rise <= noise),
        CheckRow("usc_ratio", "median_ratio_smallest_to_largest", ratio, ratio_bound,
                 ratio <= ratio_bound, epsilon=eps_desc[-1]),
    ]
