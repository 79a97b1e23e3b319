"""Experiment configuration, the eps-sweep and the verification suite."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from rdelab import attractor as att
from rdelab import checks
from rdelab.field import Grid1D
from rdelab.noise import ou_from_path
from rdelab.spde import Nonlinearity, ProblemSpec, SolverConfig, make_profile

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ["epsilon", "seed", "dist_to_A0", "resolution_eps", "resolution_0", "r_hat",
                 "wall_time"]
VERIFY_COLUMNS = ["check", "epsilon", "seed", "t", "quantity_name", "value", "bound_value",
                  "pass_flag"]
PROBE_COLUMNS = ["condition", "epsilon", "seed", "quantity_name", "value"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    L: float = 16.0
    N: int = 256
    dt: float = 1e-3
    lam: float = 1.0
    a: float = 1.0
    b_profile: dict = dc_field(default_factory=lambda: {"kind": "bump", "amplitude": 0.5})
    g_profile: dict | float | None = dc_field(
        default_factory=lambda: {"kind": "gaussian", "amplitude": 0.1, "width": 1.0})
    h_profile: dict | float | None = dc_field(
        default_factory=lambda: {"kind": "gaussian", "amplitude": 1.0, "width": 1.0})
    epsilons: list[float] = dc_field(default_factory=lambda: [2.0**-k for k in range(1, 7)])
    seeds: list[int] = dc_field(default_factory=lambda: list(range(8)))
    T_pullback: float = 20.0
    ensemble_count: int = 5
    eta: float = 1e-2
    output_dir: str = "out"
    absorbing_M: float | None = None
    dedup_tol: float = 1e-6
    history_margin: float = 30.0
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.epsilons:
            raise ConfigError("epsilons must be nonempty")
        if any(not 0 < e <= 1 for e in self.epsilons):
            raise ConfigError(f"all epsilons must lie in (0, 1]: {self.epsilons}")
        self.epsilons = sorted({float(e) for e in self.epsilons}, reverse=True)
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        self.seeds = [int(s) for s in self.seeds]
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        n = round(self.T_pullback / self.dt)
        if n < 2 or abs(n * self.dt - self.T_pullback) > 1e-9 * self.T_pullback:
            raise ConfigError(f"dt={self.dt} must divide T_pullback={self.T_pullback}")
        if self.ensemble_count < 1:
            raise ConfigError("ensemble_count must be >= 1")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")

    # --- (de)serialisation: nested JSON layout ---
    def to_dict(self) -> dict:
        return {
            "grid": {"L": self.L, "N": self.N},
            "solver": {"dt": self.dt},
            "problem": {"lambda": self.lam, "a": self.a, "b": self.b_profile,
                        "g": self.g_profile, "h": self.h_profile},
            "epsilons": list(self.epsilons),
            "seeds": list(self.seeds),
            "T_pullback": self.T_pullback,
            "ensemble_count": self.ensemble_count,
            "eta": self.eta,
            "output_dir": self.output_dir,
            "absorbing_M": self.absorbing_M,
            "dedup_tol": self.dedup_tol,
            "history_margin": self.history_margin,
            "record_wall_time": self.record_wall_time,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        kw = {}
        grid = doc.pop("grid", {})
        kw.update({k: grid[k] for k in ("L", "N") if k in grid})
        solver = doc.pop("solver", {})
        if "dt" in solver:
            kw["dt"] = solver["dt"]
        prob = doc.pop("problem", {})
        for src, dst in (("lambda", "lam"), ("a", "a"), ("b", "b_profile"),
                         ("g", "g_profile"), ("h", "h_profile")):
            if src in prob:
                kw[dst] = prob[src]
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw.update(doc)
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    # --- derived objects ---
    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.L, self.N)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(self.dt)

    def problem(self, epsilon: float = 0.0) -> ProblemSpec:
        grid = self.grid
        nonlin = Nonlinearity(self.a, make_profile(grid, self.b_profile))
        return ProblemSpec(self.lam, epsilon, make_profile(grid, self.g_profile),
                           make_profile(grid, self.h_profile), nonlin)

    def path(self, seed: int, forward: float = 0.0):
        return checks.pullback_path(seed, self.dt, self.T_pullback, forward, self.lam,
                                    self.history_margin)


@dataclass
class SweepRow:
    epsilon: float
    seed: int
    dist_to_A0: float
    resolution_eps: float
    resolution_0: float
    r_hat: float
    wall_time: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SweepResult:
    rows: list[SweepRow]
    M: float
    A0: att.AttractorCloud
    clouds: list[att.AttractorCloud]
    probes: list[dict]

    def dist_by_eps(self) -> dict[float, list[float]]:
        out: dict[float, list[float]] = {}
        for r in self.rows:
            if not r.failed:
                out.setdefault(r.epsilon, []).append(r.dist_to_A0)
        return out

    def resolution_by_eps(self) -> dict[float, list[float]]:
        out: dict[float, list[float]] = {}
        for r in self.rows:
            if not r.failed:
                out.setdefault(r.epsilon, []).append(max(r.resolution_eps, r.resolution_0))
        return out

    def medians(self) -> dict[float, float]:
        return {e: float(np.median(v)) for e, v in self.dist_by_eps().items()}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def calibrate_M(config: ExperimentConfig) -> float:
    """Absorbing constant: twice the largest |u| at eps = 1 over the calibration ensemble."""
    if config.absorbing_M is not None:
        return float(config.absorbing_M)
    # calibration ensemble lives in a unit ball around 0
    ens = att.seed_ensemble(att.AbsorbingBall(1.0, 0.0, 0.0), config.grid,
                            config.ensemble_count, 0)
    paths = [config.path(s) for s in config.seeds[:3]]
    return att.calibrate_absorbing_constant(config.problem(1.0), config.solver, paths,
                                            config.T_pullback, ens)


def _cell(doc: dict, eps: float, seed: int, M: float, A0_doc: dict) -> tuple[SweepRow, dict | None]:
    config = ExperimentConfig.from_dict(doc)
    A0 = att.AttractorCloud.from_json(A0_doc)
    start = time.perf_counter()
    try:
        omega = config.path(seed)
        r_hat = ou_from_path(omega, config.lam, 4.0).r_hat
        ball = att.AbsorbingBall(M, eps, r_hat)
        cloud = att.pullback_attractor(config.problem(eps), config.solver, omega,
                                       config.T_pullback, config.ensemble_count,
                                       config.dedup_tol, ball=ball, seed=seed)
        d = att.hausdorff_semidist(cloud, A0)
        row = SweepRow(eps, seed, d, cloud.resolution, A0.resolution, r_hat,
                       time.perf_counter() - start)
        return row, cloud.to_json()
    except Exception as exc:  # crash isolation: one bad cell never stops the sweep
        log.warning("cell eps=%g seed=%d failed: %s", eps, seed, exc)
        return SweepRow(eps, seed, math.nan, math.nan, A0.resolution, math.nan,
                        time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}"), None


def _condition_probes(config: ExperimentConfig, M: float, rows: Sequence[SweepRow],
                      clouds: Sequence[att.AttractorCloud]) -> list[dict]:
    probes = []
    # convergence of the cocycle to the deterministic flow
    T_conv = min(2.0, config.T_pullback)
    spec = config.problem(1.0)
    for seed in config.seeds:
        omega = checks.pullback_path(seed, config.dt, 0.0, T_conv, config.lam,
                                     config.history_margin)
        u0 = checks.smooth_state(config.grid, seed)
        for c in checks.convergence_sups(spec, config.solver, omega, T_conv, u0,
                                         config.epsilons):
            probes.append({"condition": "convergence", "epsilon": c.epsilon, "seed": seed,
                           "quantity_name": "sup_err_sq", "value": c.sup})
    # absorbing radius M + eps M r_hat
    for r in rows:
        if not r.failed:
            probes.append({"condition": "absorbing_radius", "epsilon": r.epsilon, "seed": r.seed,
                           "quantity_name": "absorbing_radius",
                           "value": att.AbsorbingBall(M, r.epsilon, r.r_hat).radius})
    # precompactness of the union of computed attractors
    if clouds:
        rep = att.union_precompactness_probe(list(clouds), config.eta)
        probes.append({"condition": "precompactness", "epsilon": None, "seed": None,
                       "quantity_name": "net_size", "value": float(rep.net_size)})
        probes.append({"condition": "precompactness", "epsilon": None, "seed": None,
                       "quantity_name": "max_tail_mass", "value": rep.max_tail})
        probes.append({"condition": "precompactness", "epsilon": None, "seed": None,
                       "quantity_name": "certificate_pass", "value": float(rep.passed)})
    return probes


def run_sweep(config: ExperimentConfig, jobs: int = 1, write: bool = True) -> SweepResult:
    """A_0 once, then A_eps(omega) and dist(A_eps(omega), A_0) for every (eps, seed) cell."""
    M = calibrate_M(config)
    ball0 = att.AbsorbingBall(M, 0.0, 0.0)
    A0 = att.global_attractor(config.problem(0.0), config.solver, config.T_pullback,
                              config.ensemble_count, config.dedup_tol, ball=ball0, seed=0)
    doc, A0_doc = config.to_dict(), A0.to_json()
    cells = [(e, s) for e in config.epsilons for s in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_cell, doc, e, s, M, A0_doc) for e, s in cells]
            results = [f.result() for f in futs]
    else:
        results = [_cell(doc, e, s, M, A0_doc) for e, s in cells]
    rows = [r for r, _ in results]
    clouds = [att.AttractorCloud.from_json(c) for _, c in results if c is not None]
    probes = _condition_probes(config, M, rows, clouds)
    result = SweepResult(rows, M, A0, clouds, probes)
    if write:
        write_sweep(config, result)
    return result


def write_sweep(config: ExperimentConfig, result: SweepResult) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in result.rows:
            wall = r.wall_time if config.record_wall_time else None
            w.writerow([_fmt(r.epsilon), _fmt(r.seed), _fmt(r.dist_to_A0), _fmt(r.resolution_eps),
                        _fmt(r.resolution_0), _fmt(r.r_hat), _fmt(wall)])
    with open(out / "sweep_probes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROBE_COLUMNS)
        for p in result.probes:
            w.writerow([_fmt(p[c]) for c in PROBE_COLUMNS])
    result.A0.save(out / "attractor_eps0.json")
    meta = {
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "absorbing_M": result.M,
        "config": config.to_dict(),
        "wall_time": [{"epsilon": r.epsilon, "seed": r.seed, "seconds": r.wall_time}
                      for r in result.rows],
        "failures": [{"epsilon": r.epsilon, "seed": r.seed, "error": r.error}
                     for r in result.rows if r.failed],
    }
    (out / "sweep_meta.json").write_text(json.dumps(meta, indent=2))
    return out


# --- verification suite -------------------------------------------------------

#: check name -> what it asserts; every name produces at least one row
CHECK_INVENTORY = {
    "ou_oracle": "OU recursion vs adaptive quadrature, relative error < 1e-3",
    "ou_stationarity": "OU values commute with the shift within 1e-9",
    "tempered_bound": "|y|^2 + |y|^p <= e^{lam|t|/2} r_hat, tight at one node",
    "summation_by_parts": "discrete Laplacian symmetric and energy identity to 1e-12",
    "spatial_order": "Laplacian error order in [1.9, 2.1]",
    "temporal_order": "eigenmode decay error order in [0.9, 1.1]",
    "cocycle_law": "Phi(t+s, w) = Phi(t, theta_s w) Phi(s, w) within 1e-10",
    "linear_dist_ratio": "f = 0: dist(A_eps, A_0)/eps spread <= 1%",
    "linear_duhamel_oracle": "f = 0: attractor point vs spectral Duhamel oracle <= 1e-4",
    "v_energy_bound": "fit-freeze bound on |v|^2 holds at intermediate eps",
    "absorption_bound": "fit-freeze bound on |u|^2 holds at intermediate eps",
    "gradient_bound": "fit-freeze bound on |grad v|^2 holds at intermediate eps",
    "tail_uniformity": "tail radius found at eps = 1 works for smaller eps",
    "convergence_bound": "sup_t |u^eps - u^0|^2 decays at least linearly in eps",
    "convergence_robustness": "fitted eps-coefficient stable within 20% under refinement",
    "pullback_resolution": "resolution decreases for T/4, T/2, T (eps = 0.5)",
    "invariance": "Phi(s, w, A(w)) within 3x resolution of A(theta_s w) (eps = 0.5)",
    "precompactness": "tail certificate of the pooled attractor clouds",
    "usc_trend": "median dist(A_eps, A_0) non-increasing within 2x resolution",
    "usc_ratio": "median dist at smallest eps <= 0.05 x median at largest",
}


#: amplitude for the attractor-level checks; the largest eps of the default sweep
ATTRACTOR_CHECK_EPS = 0.5


def _guarded(name: str, fn, *args, **kw) -> list[checks.CheckRow]:
    """Run one check; a crash becomes a single failed row instead of aborting the suite."""
    try:
        return fn(*args, **kw)
    except Exception as exc:
        log.warning("check %s crashed: %s", name, exc)
        return [checks.CheckRow(name, f"error: {type(exc).__name__}: {exc}", math.nan,
                                math.nan, False)]


def run_verify(config: ExperimentConfig, jobs: int = 1, write: bool = True,
               sweep: SweepResult | None = None) -> list[checks.CheckRow]:
    """Run every check in :data:`CHECK_INVENTORY` at the config's scale (detail rows)."""
    spec = config.problem(1.0)
    cfg = config.solver
    seeds3 = config.seeds[:3]
    T = config.T_pullback
    lam = config.lam
    rows: list[checks.CheckRow] = []
    rows += _guarded("ou_oracle", checks.check_ou_oracle, lam=lam)
    rows += _guarded("ou_stationarity", checks.check_ou_stationarity, lam=lam)
    rows += _guarded("tempered_bound", checks.check_tempered_bound, lam=lam)
    rows += _guarded("summation_by_parts", checks.check_summation_by_parts)
    rows += _guarded("spatial_order", checks.check_spatial_order)
    rows += _guarded("temporal_order", checks.check_temporal_order, lam=lam)
    rows += _guarded("cocycle_law", checks.check_cocycle_law, spec, cfg, seeds3, T=min(2.0, T))
    rows += _guarded("linear_dist_ratio", checks.check_linear_fixed_point, config.grid, cfg.dt,
                     seeds3, T=T, eps_list=config.epsilons, lam=lam)
    if sweep is None:
        sweep = run_sweep(config, jobs=jobs, write=write)
    M = sweep.M
    horizons = (T / 2, 3 * T / 4, T)
    rows += _guarded("v_energy_bound", checks.check_energy_bounds, spec, cfg, seeds3,
                     horizons, M, config.ensemble_count)
    rows += _guarded("tail_uniformity", checks.check_tail_uniformity, spec, cfg, seeds3,
                     T, M, ensemble_count=config.ensemble_count)
    rows += _guarded("convergence_bound", checks.check_convergence_bound, spec, cfg, seeds3,
                     T=min(2.0, T), eps_list=config.epsilons)
    rows += _guarded("convergence_robustness", checks.check_convergence_robustness, spec, cfg,
                     seeds3[0], T=min(2.0, T))
    spec_a = spec.with_epsilon(ATTRACTOR_CHECK_EPS)
    rows += _guarded("pullback_resolution", checks.check_resolution_decreasing, spec_a, cfg,
                     seeds3, M, (T / 4, T / 2, T), config.ensemble_count)
    rows += _guarded("invariance", checks.check_invariance, spec_a, cfg, seeds3, T, M,
                     ensemble_count=config.ensemble_count)
    rows += _guarded("precompactness", checks.check_precompactness,
                     sweep.clouds + [sweep.A0], config.eta)
    rows += _guarded("usc_trend", checks.usc_rows, config.epsilons, sweep.dist_by_eps(),
                     sweep.resolution_by_eps())
    if write:
        write_verify(config, rows)
    return rows


def summarize(rows: Sequence[checks.CheckRow]) -> list[checks.CheckRow]:
    """One row per inventory check: the first failing detail row, else the first row.

    A check with no detail rows at all is reported as failed.
    """
    out = []
    for name in CHECK_INVENTORY:
        mine = [r for r in rows if r.check == name]
        if not mine:
            out.append(checks.CheckRow(name, "missing", math.nan, math.nan, False))
            continue
        bad = [r for r in mine if not r.pass_flag]
        pick = bad[0] if bad else mine[0]
        out.append(checks.CheckRow(name, pick.quantity_name, pick.value, pick.bound_value,
                                   not bad, pick.epsilon, pick.seed, pick.t))
    return out


def _write_rows(dest: Path, rows: Sequence[checks.CheckRow]) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VERIFY_COLUMNS)
        for r in rows:
            d = r.as_dict()
            w.writerow([_fmt(d[c].item() if isinstance(d[c], np.generic) else d[c])
                        for c in VERIFY_COLUMNS])


def write_verify(config: ExperimentConfig, rows: Sequence[checks.CheckRow]) -> Path:
    """``verify.csv``: one row per inventory check; ``verify_detail.csv``: every row."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "verify.csv"
    _write_rows(dest, summarize(rows))
    _write_rows(out / "verify_detail.csv", rows)
    return dest


def missing_checks(rows: Sequence[checks.CheckRow]) -> list[str]:
    seen = {r.check for r in rows}
    return [name for name in CHECK_INVENTORY if name not in seen]

