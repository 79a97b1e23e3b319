"""Energy, tail and eps-convergence diagnostics along pullback trajectories.

Generic constants are never taken from proofs.  Bounds are checked with a
fit-then-freeze protocol: constants are calibrated at eps = 0 and eps = 1
and then required to hold at the intermediate amplitudes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from rdelab.field import Field, tail_mass
from rdelab.noise import WienerPath, ou_from_path, shift, steps_for
from rdelab.spde import ProblemSpec, SolverConfig, trajectory

#: derivative bound of the smoothstep cut-off
C_RHO = 1.5


def cutoff_rho(s):
    """Smoothstep cut-off: 0 on [0, 1], ``3(s-1)^2 - 2(s-1)^3`` on (1, 2), 1 beyond."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("cut-off argument must be >= 0")
    r = np.clip(s_arr - 1.0, 0.0, 1.0)
    out = r * r * (3.0 - 2.0 * r)
    return float(out) if out.ndim == 0 else out


def cutoff_rho_prime(s):
    s_arr = np.asarray(s, dtype=float)
    r = np.clip(s_arr - 1.0, 0.0, 1.0)
    out = 6.0 * r * (1.0 - r)
    return float(out) if out.ndim == 0 else out


def cutoff_mass(f: Field, k: float) -> float:
    """``hx * sum rho(x_i^2 / k^2) f_i^2``."""
    w = cutoff_rho(f.grid.x**2 / k**2)
    return f.grid.hx * float(np.sum(w * f.values**2))


@dataclass
class EnergyReport:
    t: float
    epsilon: float
    r_hat: float
    v_norm_sq: float
    grad_norm_sq: float
    u_norm_sq: float
    grad_hist_integral: float
    lp_hist_integral: float
    decay_term: float


def _sq(hx: float, a: np.ndarray) -> np.ndarray:
    return hx * np.sum(a * a, axis=-1)


def _grad_sq(hx: float, a: np.ndarray) -> np.ndarray:
    # pad with the Dirichlet ghost zeros along the last axis
    pad = [(0, 0)] * (a.ndim - 1) + [(1, 1)]
    d = np.diff(np.pad(a, pad), axis=-1) / hx
    return hx * np.sum(d * d, axis=-1)


def _pullback_path(spec: ProblemSpec, omega: WienerPath | None, t: float):
    if spec.epsilon == 0:
        return None
    return shift(omega, -t)


def energy_reports(spec: ProblemSpec, cfg: SolverConfig, omega: WienerPath | None,
                   t: float, U0: np.ndarray) -> list[EnergyReport]:
    """One :class:`EnergyReport` per row of ``U0`` along ``v(tau, theta_{-t} omega, v0)``."""
    U0 = np.atleast_2d(np.asarray(U0, dtype=float))
    hx = spec.grid.hx
    lam, eps, p = spec.lam, spec.epsilon, spec.nonlin.p
    h = spec.h.values
    n = steps_for(t, cfg.dt)
    r_hat = 0.0 if omega is None else ou_from_path(omega, lam, p).r_hat
    path = _pullback_path(spec, omega, t)

    grad_int = np.zeros(len(U0))
    lp_int = np.zeros(len(U0))
    prev = None
    v0 = v = None
    y = 0.0
    for k, v, y in trajectory(spec, cfg, t, path, U0):
        w = math.exp(lam * (k * cfg.dt - t))
        u = v + (eps * y) * h
        cur = (w * _grad_sq(hx, v), w * hx * np.sum(np.abs(u) ** p, axis=-1))
        if k == 0:
            v0 = v
        else:
            grad_int += 0.5 * cfg.dt * (prev[0] + cur[0])
            lp_int += 0.5 * cfg.dt * (prev[1] + cur[1])
        prev = cur
    u = v + (eps * y) * h
    decay = math.exp(-lam * n * cfg.dt) * _sq(hx, v0)
    vn, gn, un = _sq(hx, v), _grad_sq(hx, v), _sq(hx, u)
    return [EnergyReport(t=n * cfg.dt, epsilon=eps, r_hat=r_hat, v_norm_sq=float(vn[i]),
                         grad_norm_sq=float(gn[i]), u_norm_sq=float(un[i]),
                         grad_hist_integral=float(grad_int[i]),
                         lp_hist_integral=float(lp_int[i]), decay_term=float(decay[i]))
            for i in range(len(U0))]


def energy_report(spec: ProblemSpec, cfg: SolverConfig, omega: WienerPath | None,
                  t: float, u0: Field) -> EnergyReport:
    return energy_reports(spec, cfg, omega, t, u0.values[None, :])[0]


def tail_report(spec: ProblemSpec, cfg: SolverConfig, omega: WienerPath | None, t: float,
                u0: Field, R_grid: Sequence[float]) -> dict[float, float]:
    """Tail masses of ``u(t, theta_{-t} omega, u0)`` for each radius in ``R_grid``."""
    grid = spec.grid
    for R in R_grid:
        if not 0 <= R <= grid.L:
            raise ValueError(f"R must lie in [0, {grid.L}], got {R}")
    path = _pullback_path(spec, omega, t)
    for _, v, y in trajectory(spec, cfg, t, path, u0.values):
        pass
    u = Field(grid, v + (spec.epsilon * y) * spec.h.values)
    return {float(R): tail_mass(u, R) for R in R_grid}


def smallest_tail_radius(masses: dict[float, float], eta: float) -> float | None:
    """Smallest R on the grid with tail mass below ``eta`` (None if none qualifies)."""
    good = [R for R, m in sorted(masses.items()) if m < eta]
    return good[0] if good else None


@dataclass
class ConvergenceCurve:
    times: np.ndarray
    err_sq: np.ndarray
    epsilon: float
    r_hat: float

    @property
    def sup(self) -> float:
        return float(np.max(self.err_sq))


def convergence_check(spec_pair: tuple[ProblemSpec, ProblemSpec], cfg: SolverConfig,
                      omega: WienerPath | None, T: float, u0_eps: Field,
                      u0: Field) -> ConvergenceCurve:
    """``|u^eps(t, omega, u0_eps) - u^0(t, u0)|^2`` for ``t`` in ``[0, T]``."""
    spec_eps, spec0 = spec_pair
    if spec0.epsilon != 0:
        spec0 = spec0.with_epsilon(0.0)
    if (spec_eps.lam != spec0.lam or spec_eps.g is not spec0.g or spec_eps.h is not spec0.h
            or spec_eps.nonlin is not spec0.nonlin):
        raise ValueError("the two problems must differ only in epsilon")
    hx = spec_eps.grid.hx
    h = spec_eps.h.values
    eps = spec_eps.epsilon
    n = steps_for(T, cfg.dt)
    errs = np.empty(n + 1)
    it0 = trajectory(spec0, cfg, T, None, u0.values)
    for (k, v, y), (_, w, _) in zip(trajectory(spec_eps, cfg, T, omega, u0_eps.values), it0):
        d = v + (eps * y) * h - w
        errs[k] = hx * float(d @ d)
    r_hat = 0.0 if omega is None or eps == 0 else ou_from_path(omega, spec_eps.lam,
                                                               spec_eps.nonlin.p).r_hat
    return ConvergenceCurve(np.arange(n + 1) * cfg.dt, errs, eps, r_hat)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def convergence_coefficient(curves: Sequence[ConvergenceCurve], u0_eps: Field,
                            u0: Field) -> float:
    """Smallest ``C`` with ``sup err^2 <= C eps (r_hat + |u0_eps|^2 + |u0|^2)`` over ``curves``."""
    hx = u0.grid.hx
    mass = hx * float(u0_eps.values @ u0_eps.values) + hx * float(u0.values @ u0.values)
    return max(c.sup / (c.epsilon * (c.r_hat + mass)) for c in curves if c.epsilon > 0)


@dataclass
class FittedBound:
    """``value <= decay + C1 + eps * C2 * r_hat`` with frozen constants."""

    C1: float
    C2: float

    def bound(self, eps: float, r_hat: float, decay: float = 0.0) -> float:
        return decay + self.C1 + eps * self.C2 * r_hat

    def holds(self, value: float, eps: float, r_hat: float, decay: float = 0.0) -> bool:
        return value <= self.bound(eps, r_hat, decay)


def fit_bound(calib0: Sequence[tuple[float, float]],
              calib1: Sequence[tuple[float, float, float]]) -> FittedBound:
    """Freeze ``C1`` from eps = 0 and ``C2`` from eps = 1 samples.

    ``calib0`` holds ``(value, decay)`` pairs, ``calib1`` holds
    ``(value, decay, r_hat)`` triples.
    """
    C1 = max(max(val - dec for val, dec in calib0), 0.0)
    C2 = 0.0
    for val, dec, r in calib1:
        excess = val - dec - C1
        if excess > 0:
            if r <= 0:
                raise ValueError("eps = 1 sample exceeds C1 with r_hat = 0")
            C2 = max(C2, excess / r)
    return FittedBound(C1, C2)


REPORT_COLUMNS = ["epsilon", "seed", "t", "quantity_name", "value", "bound_value", "pass_flag"]


def write_report_csv(rows: Sequence[dict], dest: str | Path) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)

