"""Two-sided Wiener paths, the Wiener shift and the stationary OU process.

A path is stored as an immutable array of nodes on a uniform time grid
together with the index of its origin.  The shift ``theta_s`` only moves the
origin index, so shifted paths share their node array with the parent and
compositions of shifts are exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from rdelab.field import Field

#: tolerance used when snapping times to the node grid
_GRID_RTOL = 1e-9


class WindowError(ValueError):
    """A time query or shift falls outside a path window."""


def steps_for(t: float, dt: float) -> int:
    """Number of grid steps represented by ``t``; raise if not grid-aligned."""
    n = round(t / dt)
    if abs(n * dt - t) > _GRID_RTOL * max(1.0, abs(t)):
        raise WindowError(f"time {t!r} is not a multiple of dt={dt!r}")
    return int(n)


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Piecewise-linear path omega with omega(0) = 0.

    ``nodes`` holds raw values at indices ``0..len-1``; node ``k`` sits at
    time ``(k - origin) * dt``.  Values exposed to callers are re-anchored at
    the origin, ``nodes[k] - nodes[origin]``.
    """

    seed: int | None
    dt: float
    nodes: np.ndarray
    origin: int

    def __post_init__(self):
        if not 0 <= self.origin < len(self.nodes):
            raise WindowError("path window must contain t = 0")
        self.nodes.setflags(write=False)

    @property
    def origin_offset(self) -> int:
        return self.origin

    @property
    def t_min(self) -> float:
        return -self.origin * self.dt

    @property
    def t_max(self) -> float:
        return (len(self.nodes) - 1 - self.origin) * self.dt

    @property
    def times(self) -> np.ndarray:
        return (np.arange(len(self.nodes)) - self.origin) * self.dt

    @property
    def values(self) -> np.ndarray:
        return self.nodes - self.nodes[self.origin]

    def index_of(self, t: float) -> int:
        """Node index of a grid-aligned time ``t``."""
        k = self.origin + steps_for(t, self.dt)
        if not 0 <= k < len(self.nodes):
            raise WindowError(f"t={t} outside window [{self.t_min}, {self.t_max}]")
        return k

    def __call__(self, t: float) -> float:
        if not self.t_min - _GRID_RTOL <= t <= self.t_max + _GRID_RTOL:
            raise WindowError(f"t={t} outside window [{self.t_min}, {self.t_max}]")
        x = t / self.dt + self.origin
        k = min(int(math.floor(x)), len(self.nodes) - 2)
        k = max(k, 0)
        w = x - k
        return float((1.0 - w) * self.nodes[k] + w * self.nodes[k + 1] - self.nodes[self.origin])

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], dt: float,
                      t_min: float, t_max: float) -> "WienerPath":
        """Sample a deterministic path (used for synthetic test paths)."""
        n_left, n_right = _window_counts(dt, t_min, t_max)
        t = (np.arange(n_left + n_right + 1) - n_left) * dt
        nodes = np.asarray(fn(t), dtype=float).copy()
        nodes -= nodes[n_left]
        return cls(seed=None, dt=float(dt), nodes=nodes, origin=n_left)


def _window_counts(dt: float, t_min: float, t_max: float) -> tuple[int, int]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_min < t_max:
        raise WindowError(f"inverted window [{t_min}, {t_max}]")
    if not t_min < 0 < t_max:
        raise WindowError(f"window [{t_min}, {t_max}] must contain 0 in its interior")
    return int(round(-t_min / dt)), int(round(t_max / dt))


def sample_path(seed: int, dt: float, t_min: float, t_max: float) -> WienerPath:
    """Brownian path on ``[t_min, t_max]`` with nodes every ``dt``.

    The forward and backward halves are drawn from independent Philox streams
    spawned from ``seed``, each generated outward from 0; widening the window
    keeps the existing nodes unchanged.
    """
    n_left, n_right = _window_counts(dt, t_min, t_max)
    fwd_ss, bwd_ss = np.random.SeedSequence(seed).spawn(2)
    sd = math.sqrt(dt)
    fwd = np.random.Generator(np.random.Philox(fwd_ss)).standard_normal(n_right) * sd
    bwd = np.random.Generator(np.random.Philox(bwd_ss)).standard_normal(n_left) * sd
    nodes = np.concatenate([
        -np.cumsum(bwd)[::-1],
        [0.0],
        np.cumsum(fwd),
    ])
    return WienerPath(seed=seed, dt=float(dt), nodes=nodes, origin=n_left)


def shift(path: WienerPath, s: float) -> WienerPath:
    """Wiener shift: ``(theta_s omega)(tau) = omega(tau + s) - omega(s)``.

    ``s`` must be a multiple of ``path.dt`` and lie inside the window.  The
    returned path covers ``[t_min - s, t_max - s]``.
    """
    try:
        k = path.index_of(s)
    except WindowError as exc:
        raise WindowError(f"cannot shift by {s}: {exc}") from None
    return WienerPath(seed=path.seed, dt=path.dt, nodes=path.nodes, origin=k)


@dataclass(frozen=True, eq=False)
class OuProcess:
    """Stationary OU values ``y(theta_t omega)`` on the nodes of ``path``."""

    lam: float
    path: WienerPath
    y_values: np.ndarray
    r_hat: float
    p: float

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    def y(self, t: float) -> float:
        """``y(theta_t omega)``; exact node lookup on the grid, linear otherwise."""
        try:
            return float(self.y_values[self.path.index_of(t)])
        except WindowError:
            if not self.path.t_min <= t <= self.path.t_max:
                raise
            return float(np.interp(t, self.times, self.y_values))

    def tempered_envelope(self) -> np.ndarray:
        """``e^{(lam/2)|t|} * r_hat`` on the grid."""
        return np.exp(0.5 * self.lam * np.abs(self.times)) * self.r_hat


def ou_from_path(path: WienerPath, lam: float, p: float = 4.0,
                 trunc_tol: float = 1e-12) -> OuProcess:
    """Evaluate ``y(theta_t omega) = -lam * int_{-inf}^0 e^{lam tau} (theta_t omega)(tau) dtau``.

    Integrating by parts gives ``y(t) = int_{-inf}^t e^{-lam (t - s)} domega(s)``,
    so on a piecewise-linear path the exact one-step recursion is::

        y[k+1] = e^{-lam dt} y[k] + (dW_k / dt) * (1 - e^{-lam dt}) / lam

    The path is held constant left of ``t_min``, which makes ``y(t_min) = 0``.
    The neglected part of the integral at time ``t`` is bounded by
    ``e^{lam (t_min - t)} * sup |omega|``; the window is rejected when
    ``e^{lam t_min}`` exceeds ``trunc_tol``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if math.exp(lam * path.t_min) > trunc_tol:
        raise WindowError(
            f"window start {path.t_min} too short for lambda={lam}: "
            f"e^(lambda t_min)={math.exp(lam * path.t_min):.3g} > {trunc_tol:g}")
    dt = path.dt
    decay = math.exp(-lam * dt)
    gain = -math.expm1(-lam * dt) / (lam * dt)
    inc = np.diff(path.nodes) * gain
    y = np.empty(len(path.nodes))
    y[0] = 0.0
    y[1:] = lfilter([1.0], [1.0, -decay], inc)
    y.setflags(write=False)
    times = path.times
    weight = np.exp(-0.5 * lam * np.abs(times))
    r_hat = float(np.max((y ** 2 + np.abs(y) ** p) * weight))
    return OuProcess(lam=float(lam), path=path, y_values=y, r_hat=r_hat, p=float(p))


def z_field(ou: OuProcess, h: Field, t: float) -> Field:
    """``z(theta_t omega) = h * y(theta_t omega)``."""
    return h * ou.y(t)


def write_path_csv(ou: OuProcess, dest: str | Path) -> None:
    """Dump ``t, W, y`` columns for audit."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "W", "y"])
        for t, W, y in zip(ou.times, ou.path.values, ou.y_values):
            w.writerow([repr(float(t)), repr(float(W)), repr(float(y))])
