"""Pullback attractor clouds and Hausdorff semi-distances between them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from rdelab.field import Field, Grid1D, GridMismatchError, tail_mass
from rdelab.noise import WienerPath, WindowError, shift, steps_for
from rdelab.spde import ProblemSpec, SolverConfig, cocycle_array

N_SEED_MODES = 8


@dataclass(frozen=True)
class AbsorbingBall:
    """Ball of radius ``M + eps * M * r_hat`` in L^2."""

    M: float
    epsilon: float
    r_hat: float

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.r_hat < 0 or not 0 <= self.epsilon <= 1:
            raise ValueError("need r_hat >= 0 and epsilon in [0, 1]")

    @property
    def radius(self) -> float:
        return self.M + self.epsilon * self.M * self.r_hat


@dataclass(eq=False)
class AttractorCloud:
    grid: Grid1D
    points: np.ndarray          # (m, N)
    pullback_time: float
    resolution: float = math.nan
    dedup_tol: float = 1e-6
    meta: dict = dc_field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def fields(self) -> list[Field]:
        return [Field(self.grid, p) for p in self.points]

    def to_json(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "x": self.grid.x.tolist(),
            "pullback_time": self.pullback_time,
            "resolution": self.resolution,
            "dedup_tol": self.dedup_tol,
            "meta": self.meta,
            "points": self.points.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttractorCloud":
        grid = Grid1D(**doc["grid"])
        return cls(grid, np.asarray(doc["points"], dtype=float).reshape(-1, grid.N),
                   doc["pullback_time"], doc["resolution"], doc["dedup_tol"], doc.get("meta", {}))

    def save(self, dest: str | Path) -> None:
        Path(dest).write_text(json.dumps(self.to_json(), indent=1))


def _l2_cdist(a: np.ndarray, b: np.ndarray, hx: float) -> np.ndarray:
    return cdist(a, b) * math.sqrt(hx)


def dedup(points: np.ndarray, hx: float, tol: float) -> np.ndarray:
    """Greedy merge in index order: keep a point unless it is within ``tol`` of a kept one."""
    keep: list[int] = []
    for i in range(len(points)):
        if keep and np.min(_l2_cdist(points[i:i + 1], points[keep], hx)) <= tol:
            continue
        keep.append(i)
    return points[keep]


def seed_ensemble(ball: AbsorbingBall, grid: Grid1D, count: int, seed: int) -> list[Field]:
    """Zero plus ``count - 1`` random low-mode states inside the ball."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    modes = np.array([grid.mode(k).values for k in range(1, N_SEED_MODES + 1)])
    out = [grid.zeros()]
    for _ in range(count - 1):
        u = rng.standard_normal(N_SEED_MODES) @ modes
        norm = math.sqrt(grid.hx * float(u @ u))
        u *= ball.radius * rng.uniform(0.5, 1.0) / norm
        out.append(Field(grid, u))
    return out


def hausdorff_semidist(Y: AttractorCloud, Z: AttractorCloud) -> float:
    """``sup_{y in Y} inf_{z in Z} |y - z|`` in the discrete L^2 norm."""
    if Y.grid != Z.grid:
        raise GridMismatchError(f"{Y.grid} vs {Z.grid}")
    if len(Z) == 0:
        raise ValueError("Z must be nonempty")
    if len(Y) == 0:
        return 0.0
    return float(np.max(np.min(_l2_cdist(Y.points, Z.points, Y.grid.hx), axis=1)))


def hausdorff_dist(Y: AttractorCloud, Z: AttractorCloud) -> float:
    return max(hausdorff_semidist(Y, Z), hausdorff_semidist(Z, Y))


def _ensemble_array(ensemble, grid: Grid1D, ball: AbsorbingBall | None = None,
                    seed: int = 0) -> np.ndarray:
    """Initial states: a list of Fields, or a count drawn from ``ball``."""
    if isinstance(ensemble, int):
        if ball is None:
            raise ValueError("an AbsorbingBall is required to draw an ensemble by count")
        ensemble = seed_ensemble(ball, grid, ensemble, seed)
    for f in ensemble:
        if f.grid != grid:
            raise GridMismatchError(f"{f.grid} vs {grid}")
    return np.array([f.values for f in ensemble])


def pullback_images(spec: ProblemSpec, cfg: SolverConfig, omega: WienerPath | None,
                    T: float, U0: np.ndarray) -> np.ndarray:
    """``Phi_eps(T, theta_{-T} omega, u0)`` for each row of ``U0``."""
    if spec.epsilon == 0:
        return cocycle_array(spec, cfg, T, None, U0)
    if omega is None:
        raise ValueError("a noise path is required when epsilon > 0")
    steps_for(T, cfg.dt)
    if -T < omega.t_min - 1e-9 * max(1.0, T):
        raise WindowError(f"path window starts at {omega.t_min}, pullback needs {-T}")
    return cocycle_array(spec, cfg, T, shift(omega, -T), U0)


def pullback_attractor(spec: ProblemSpec, cfg: SolverConfig, omega: WienerPath | None,
                       T: float, ensemble, dedup_tol: float = 1e-6,
                       ball: AbsorbingBall | None = None, seed: int = 0) -> AttractorCloud:
    """Approximate ``A_eps(omega)`` by the pullback images of ``ensemble`` at time ``T``.

    ``ensemble`` is a list of initial Fields or a member count drawn from
    ``ball`` with :func:`seed_ensemble`.  ``resolution`` is the symmetric
    Hausdorff distance between the images at ``T`` and ``T/2`` from the same
    ensemble.
    """
    grid = spec.grid
    U0 = _ensemble_array(ensemble, grid, ball, seed)
    full = pullback_images(spec, cfg, omega, T, U0)
    half_T = steps_for(T, cfg.dt) // 2 * cfg.dt
    half = pullback_images(spec, cfg, omega, half_T, U0)
    cloud = AttractorCloud(grid, dedup(full, grid.hx, dedup_tol), T, dedup_tol=dedup_tol)
    half_cloud = AttractorCloud(grid, dedup(half, grid.hx, dedup_tol), half_T, dedup_tol=dedup_tol)
    cloud.resolution = hausdorff_dist(cloud, half_cloud)
    cloud.meta = {"epsilon": spec.epsilon, "seed": None if omega is None else omega.seed,
                  "ensemble_count": len(U0)}
    return cloud


def global_attractor(spec: ProblemSpec, cfg: SolverConfig, T: float, ensemble,
                     dedup_tol: float = 1e-6, ball: AbsorbingBall | None = None,
                     seed: int = 0) -> AttractorCloud:
    """Deterministic attractor of the eps = 0 flow (forward images equal pullback ones)."""
    return pullback_attractor(spec.with_epsilon(0.0), cfg, None, T, ensemble, dedup_tol,
                              ball, seed)


def calibrate_absorbing_constant(spec: ProblemSpec, cfg: SolverConfig, omegas, T: float,
                                 ensemble) -> float:
    """``M = 2 * max |Phi_1(T, theta_{-T} omega, u0)|`` over paths and ensemble members."""
    spec1 = spec.with_epsilon(1.0)
    U0 = _ensemble_array(ensemble, spec.grid)
    hx = spec.grid.hx
    best = 0.0
    for om in omegas:
        U = pullback_images(spec1, cfg, om, T, U0)
        best = max(best, float(np.max(np.sqrt(hx * np.sum(U * U, axis=1)))))
    return 2.0 * best


@dataclass
class CoveringReport:
    eta: float
    R: float
    net_size: int
    net_indices: list[int]
    max_tail: float
    tail_threshold: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.max_tail <= self.tail_threshold


def union_precompactness_probe(clouds: list[AttractorCloud], eta: float,
                               R: float | None = None) -> CoveringReport:
    """Greedy eta-net over the pooled clouds plus the tail certificate at ``R``.

    The certificate asks every pooled point to carry tail mass at most
    ``(eta/4)^2`` beyond ``R`` (default ``L/2``).
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if not clouds:
        raise ValueError("need at least one cloud")
    grid = clouds[0].grid
    for c in clouds:
        if c.grid != grid:
            raise GridMismatchError(f"{c.grid} vs {grid}")
    R = grid.L / 2 if R is None else R
    pts = np.concatenate([c.points for c in clouds])
    net: list[int] = []
    for i in range(len(pts)):
        if net and np.min(_l2_cdist(pts[i:i + 1], pts[net], grid.hx)) <= eta:
            continue
        net.append(i)
    tails = [tail_mass(Field(grid, p), R) for p in pts]
    return CoveringReport(eta=eta, R=R, net_size=len(net), net_indices=net,
                          max_tail=max(tails), tail_threshold=(eta / 4) ** 2,
                          n_points=len(pts))
