"""Pathwise solver for the OU-transformed reaction-diffusion equation.

The random equation for ``v = u - eps * z(theta_t omega)`` is advanced with a
semi-implicit Euler step: ``lam - Laplacian`` implicit, the reaction term,
the forcing and ``eps * Laplacian z`` explicit at the left endpoint.  With the
noise sampled on the path nodes, composing runs along shifted paths
reproduces a single long run, so the discrete map is a cocycle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.linalg import solve_banded

from rdelab.field import (Field, Grid1D, GridMismatchError, laplacian_array,
                          norm_h1_semi, norm_l2, norm_lp, tail_mass)
from rdelab.noise import WienerPath, WindowError, ou_from_path, steps_for

#: abort when dt * 3a * max|u|^2 exceeds this (explicit Euler bound for s' = -a s^3)
STABILITY_BUDGET = 2.0


class SolverInstabilityError(RuntimeError):
    pass


# --- profiles ---------------------------------------------------------------

def gaussian(grid: Grid1D, amplitude=1.0, width=1.0, center=0.0) -> Field:
    return Field(grid, amplitude * np.exp(-((grid.x - center) / width) ** 2))


def bump(grid: Grid1D, amplitude=1.0, width=None, center=0.0) -> Field:
    """C^1 bump ``amplitude * (1 - r^2)^2`` on ``|x - center| < width``.

    Default width is ``L / 4`` so the support stays inside ``|x| <= L/4``.
    """
    if width is None:
        width = grid.L / 4
    r = (grid.x - center) / width
    return Field(grid, np.where(np.abs(r) < 1, amplitude * (1 - r**2) ** 2, 0.0))


PROFILES = {"gaussian": gaussian, "bump": bump}


def make_profile(grid: Grid1D, desc: dict | float | None) -> Field:
    """Build a Field from a config description ``{"kind": ..., **params}``.

    A bare number means a constant profile; ``None`` means zero.
    """
    if desc is None:
        return grid.zeros()
    if isinstance(desc, (int, float)):
        return Field(grid, np.full(grid.N, float(desc)))
    params = dict(desc)
    kind = params.pop("kind")
    return PROFILES[kind](grid, **params)


# --- problem ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """``f(x, s) = -a s^3 + b(x) s`` (growth exponent p = 4).

    The structure constants are derived from ``a`` and ``b`` by Young's
    inequality; see :meth:`alpha1` and friends.
    """

    a: float
    b: Field
    p: float = dc_field(default=4.0, init=False)

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"cubic coefficient must be >= 0, got {self.a}")
        if self.a == 0 and np.any(self.b.values != 0):
            raise ValueError("a = 0 is only allowed for the linear case b = 0")
        outside = np.abs(self.b.grid.x) > self.b.grid.L / 4
        if np.any(self.b.values[outside] != 0):
            raise ValueError("b must be supported inside |x| <= L/4")

    @classmethod
    def zero(cls, grid: Grid1D) -> "Nonlinearity":
        return cls(0.0, grid.zeros())

    @property
    def is_zero(self) -> bool:
        return self.a == 0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return (-self.a * u * u + self.b.values) * u

    def ds(self, u: np.ndarray) -> np.ndarray:
        return -3.0 * self.a * u * u + self.b.values

    # f(x,s)s <= -alpha1 |s|^p + psi1
    @property
    def alpha1(self) -> float:
        return self.a / 2

    @property
    def psi1(self) -> np.ndarray:
        return self.b.values**2 / (2 * self.a) if self.a > 0 else np.zeros_like(self.b.values)

    # |f| <= alpha2 |s|^{p-1} + psi2
    @property
    def alpha2(self) -> float:
        return self.a + 1.0 / 3.0

    @property
    def psi2(self) -> np.ndarray:
        return (2.0 / 3.0) * np.abs(self.b.values) ** 1.5

    # df/ds <= beta
    @property
    def beta(self) -> float:
        return max(float(np.max(self.b.values)), 0.0)

    # |df/ds| <= alpha3 |s|^{p-2} + psi4
    @property
    def alpha3(self) -> float:
        return 3.0 * self.a

    @property
    def psi4(self) -> np.ndarray:
        return np.abs(self.b.values)

    def psi3(self, s_max: float) -> np.ndarray:
        """Bound on ``|df/dx| = |b'(x) s|`` for ``|s| <= s_max``."""
        grid = self.b.grid
        db = np.gradient(np.concatenate([[0.0], self.b.values, [0.0]]), grid.hx)[1:-1]
        return np.abs(db) * s_max


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    lam: float
    epsilon: float
    g: Field
    h: Field
    nonlin: Nonlinearity

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for f in (self.h, self.nonlin.b):
            if f.grid != self.g.grid:
                raise GridMismatchError("g, h and b must share one grid")

    @property
    def grid(self) -> Grid1D:
        return self.g.grid

    def with_epsilon(self, epsilon: float) -> "ProblemSpec":
        return replace(self, epsilon=float(epsilon))


@dataclass(frozen=True)
class SolverConfig:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def default_problem(grid: Grid1D, epsilon: float = 1.0, lam: float = 1.0, a: float = 1.0,
                    b_amp: float = 0.5, g_amp: float = 0.1, h_amp: float = 1.0) -> ProblemSpec:
    """Cubic problem used by the experiments: Gaussian ``g`` and ``h``, bump ``b``."""
    return ProblemSpec(
        lam=lam, epsilon=epsilon,
        g=gaussian(grid, g_amp, 1.0),
        h=gaussian(grid, h_amp, 1.0),
        nonlin=Nonlinearity(a, bump(grid, b_amp)),
    )


# --- stepping ---------------------------------------------------------------

def _implicit_bands(spec: ProblemSpec, dt: float) -> np.ndarray:
    """Banded storage of ``I + dt (lam - Laplacian_h)``."""
    grid = spec.grid
    r = dt / grid.hx**2
    ab = np.empty((3, grid.N))
    ab[0, :] = -r
    ab[1, :] = 1.0 + dt * spec.lam + 2.0 * r
    ab[2, :] = -r
    ab[0, 0] = ab[2, -1] = 0.0
    return ab


def f_eval(nonlin: Nonlinearity, u: Field) -> Field:
    if u.grid != nonlin.b.grid:
        raise GridMismatchError(f"{u.grid} vs {nonlin.b.grid}")
    return Field(u.grid, nonlin(u.values))


def _check_stability(spec: ProblemSpec, dt: float, u: np.ndarray, step: int) -> None:
    if spec.nonlin.a > 0:
        umax = float(np.max(np.abs(u)))
        if not math.isfinite(umax):
            raise SolverInstabilityError(f"non-finite state at step {step}")
        scale = dt * 3.0 * spec.nonlin.a * umax**2
        if scale > STABILITY_BUDGET:
            raise SolverInstabilityError(
                f"step {step}: dt*3a*max|u|^2 = {scale:.3g} exceeds {STABILITY_BUDGET} "
                f"(max|u| = {umax:.3g}); reduce dt")


class _Stepper:
    """Semi-implicit one-step map on arrays shaped ``(..., N)``."""

    def __init__(self, spec: ProblemSpec, dt: float):
        self.spec = spec
        self.dt = dt
        self.ab = _implicit_bands(spec, dt)
        self.g = spec.g.values
        self.lap_h = laplacian_array(spec.h.values.copy(), spec.grid.hx)

    def __call__(self, v: np.ndarray, y: float, step: int = 0) -> np.ndarray:
        spec, dt = self.spec, self.dt
        eps = spec.epsilon
        if eps != 0:
            u = v + (eps * y) * spec.h.values
            rhs = v + dt * (spec.nonlin(u) + self.g + (eps * y) * self.lap_h)
        else:
            u = v
            rhs = v + dt * (spec.nonlin(v) + self.g)
        _check_stability(spec, dt, u, step)
        out = solve_banded((1, 1), self.ab, rhs.T, check_finite=False).T
        if not np.all(np.isfinite(out)):
            raise SolverInstabilityError(f"non-finite state after step {step}")
        return out


def step_v(spec: ProblemSpec, cfg: SolverConfig, v: Field, z_now: Field,
           z_lap_now: Field) -> Field:
    """One step of ``(I + dt(lam - Lap)) v+ = v + dt [f(v + eps z) + g + eps Lap z]``."""
    for f in (v, z_now, z_lap_now):
        if f.grid != spec.grid:
            raise GridMismatchError(f"{f.grid} vs {spec.grid}")
    dt, eps = cfg.dt, spec.epsilon
    u = v.values + eps * z_now.values
    _check_stability(spec, dt, u, 0)
    rhs = v.values + dt * (spec.nonlin(u) + spec.g.values + eps * z_lap_now.values)
    out = solve_banded((1, 1), _implicit_bands(spec, dt), rhs, check_finite=False)
    if not np.all(np.isfinite(out)):
        raise SolverInstabilityError("non-finite state after step")
    return Field(spec.grid, out)


def _noise_values(spec: ProblemSpec, omega: WienerPath | None, dt: float, n: int) -> np.ndarray:
    """``y(theta_{k dt} omega)`` for ``k = 0..n`` (zeros when eps = 0)."""
    if spec.epsilon == 0:
        return np.zeros(n + 1)
    if omega is None:
        raise ValueError("a noise path is required when epsilon > 0")
    if abs(omega.dt - dt) > 1e-12 * dt:
        raise ValueError(f"solver dt={dt} differs from path dt={omega.dt}")
    ou = ou_from_path(omega, spec.lam, spec.nonlin.p)
    end = omega.origin + n
    if end >= len(omega.nodes):
        raise WindowError(f"path window ends at {omega.t_max}, need {n * dt}")
    return ou.y_values[omega.origin:end + 1]


def trajectory(spec: ProblemSpec, cfg: SolverConfig, t: float,
               omega: WienerPath | None, u0: np.ndarray) -> Iterator[tuple[int, np.ndarray, float]]:
    """Yield ``(k, v_k, y_k)`` for ``k = 0..t/dt`` starting from ``u(0) = u0``.

    ``u0`` may be a single state ``(N,)`` or an ensemble ``(m, N)``;
    ``u_k = v_k + eps * y_k * h``.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    n = steps_for(t, cfg.dt)
    ys = _noise_values(spec, omega, cfg.dt, n)
    step = _Stepper(spec, cfg.dt)
    h = spec.h.values
    eps = spec.epsilon
    v = np.array(u0, dtype=float)
    if eps != 0:
        v = v - (eps * ys[0]) * h
    yield 0, v, float(ys[0])
    for k in range(n):
        v = step(v, ys[k], k)
        yield k + 1, v, float(ys[k + 1])


def cocycle_array(spec: ProblemSpec, cfg: SolverConfig, t: float,
                  omega: WienerPath | None, u0: np.ndarray) -> np.ndarray:
    """Array form of :func:`cocycle`; accepts an ensemble ``(m, N)``."""
    u0 = np.asarray(u0, dtype=float)
    if steps_for(t, cfg.dt) == 0:
        return u0.copy()
    for _, v, y in trajectory(spec, cfg, t, omega, u0):
        pass
    if spec.epsilon != 0:
        return v + (spec.epsilon * y) * spec.h.values
    return v


def cocycle(spec: ProblemSpec, cfg: SolverConfig, t: float, omega: WienerPath | None,
            u0: Field) -> Field:
    """``Phi_eps(t, omega, u0) = v(t) + eps z(theta_t omega)`` with ``v(0) = u0 - eps z(omega)``."""
    if u0.grid != spec.grid:
        raise GridMismatchError(f"{u0.grid} vs {spec.grid}")
    return Field(spec.grid, cocycle_array(spec, cfg, t, omega, u0.values))


def deterministic_flow(spec: ProblemSpec, cfg: SolverConfig, t: float, u0: Field) -> Field:
    """The eps = 0 semigroup; same code path as :func:`cocycle`."""
    return cocycle(spec.with_epsilon(0.0), cfg, t, None, u0)


# --- trajectory dumps -------------------------------------------------------

TRAJECTORY_COLUMNS = ["t", "l2", "h1_semi", "lp_p", "tail_mass"]


def trajectory_rows(spec: ProblemSpec, cfg: SolverConfig, t: float, omega: WienerPath | None,
                    u0: Field, every: int = 1, tail_R: float | None = None) -> list[tuple]:
    """Time series of ``(t, |u|, |grad u|, |u|_p^p, tail_mass)`` every ``every`` steps."""
    grid = spec.grid
    R = grid.L / 2 if tail_R is None else tail_R
    p = spec.nonlin.p
    h = spec.h.values
    n = steps_for(t, cfg.dt)
    rows = []
    for k, v, y in trajectory(spec, cfg, t, omega, u0.values):
        if k % every and k != n:
            continue
        u = Field(grid, v + (spec.epsilon * y) * h)
        rows.append((k * cfg.dt, norm_l2(u), norm_h1_semi(u), norm_lp(u, p) ** p, tail_mass(u, R)))
    return rows


def write_trajectory_csv(rows: list[tuple], dest: str | Path) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])
