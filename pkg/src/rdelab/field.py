"""Uniform Dirichlet grid on [-L, L] and the grid functions living on it."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Interior nodes ``x_i = -L + i*hx``, ``i = 1..N``, with ``hx = 2L/(N+1)``."""

    L: float
    N: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.N < 3:
            raise ValueError(f"need at least 3 interior nodes, got {self.N}")

    @property
    def hx(self) -> float:
        return 2.0 * self.L / (self.N + 1)

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.hx * np.arange(1, self.N + 1)

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.N))

    def mode(self, k: int) -> "Field":
        """k-th Dirichlet eigenvector ``sin(k pi (x + L) / 2L)``."""
        return Field(self, np.sin(k * math.pi * (self.x + self.L) / (2.0 * self.L)))

    def mode_eigenvalue(self, k: int) -> float:
        """Eigenvalue of the discrete Laplacian for :meth:`mode` ``k`` (negative)."""
        hx = self.hx
        return -(2.0 / hx**2) * (1.0 - math.cos(k * math.pi * hx / (2.0 * self.L)))

    def to_dict(self) -> dict:
        return {"L": self.L, "N": self.N}


class Field:
    """Interior nodal values of a grid function (zero on the boundary)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid1D, values):
        arr = np.array(values, dtype=float)
        if arr.shape != (grid.N,):
            raise ValueError(f"expected {grid.N} values, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Field values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    def _check(self, other: "Field") -> None:
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return NotImplemented

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __mul__(self, c):
        if isinstance(c, Field):
            self._check(c)
            return Field(self.grid, self.values * c.values)
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self):
        return f"Field(N={self.grid.N}, L={self.grid.L}, l2={norm_l2(self):.6g})"


def _padded(f: Field) -> np.ndarray:
    return np.concatenate([[0.0], f.values, [0.0]])


def laplacian_array(u: np.ndarray, hx: float) -> np.ndarray:
    """Second difference along the last axis with zero ghost values."""
    out = -2.0 * u
    out[..., 1:] += u[..., :-1]
    out[..., :-1] += u[..., 1:]
    return out / hx**2


def laplacian(f: Field) -> Field:
    return Field(f.grid, laplacian_array(f.values, f.grid.hx))


def norm_l2(f: Field) -> float:
    return math.sqrt(f.grid.hx * float(np.dot(f.values, f.values)))


def norm_lp(f: Field, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if p == 2:
        return norm_l2(f)
    return (f.grid.hx * float(np.sum(np.abs(f.values) ** p))) ** (1.0 / p)


def norm_h1_semi(f: Field) -> float:
    """Discrete Dirichlet gradient norm including the two boundary jumps."""
    d = np.diff(_padded(f)) / f.grid.hx
    return math.sqrt(f.grid.hx * float(np.dot(d, d)))


def inner(f: Field, g: Field) -> float:
    f._check(g)
    return f.grid.hx * float(np.dot(f.values, g.values))


def tail_mass(f: Field, R: float) -> float:
    """``hx * sum_{|x_i| >= R} f_i^2``.

    ``R`` is capped at the outermost interior node so that ``R = L`` still
    measures the two boundary-adjacent nodes.
    """
    g = f.grid
    if not 0 <= R <= g.L:
        raise ValueError(f"R must lie in [0, {g.L}], got {R}")
    cut = min(R, g.L - g.hx) - 1e-9 * g.hx
    mask = np.abs(g.x) >= cut
    v = f.values[mask]
    return f.grid.hx * float(np.dot(v, v))


def write_field_csv(f: Field, dest: str | Path) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "value"])
        for x, v in zip(f.grid.x, f.values):
            w.writerow([repr(float(x)), repr(float(v))])
