"""Uniform cell-centered grids and the density fields living on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, ParameterDomainError


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 8:
            raise ParameterDomainError("a grid needs at least 8 cells")
        if not self.x_max > self.x_min:
            raise ParameterDomainError("x_max must exceed x_min")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n) + 0.5) * self.h

    @property
    def edges(self) -> np.ndarray:
        return self.x_min + np.arange(self.n + 1) * self.h

    @classmethod
    def with_walls(cls, left, right, h_max, pad=0.0):
        """Grid whose faces fall exactly on ``left`` and ``right``.

        The spacing is the largest ``(right - left)/m`` not exceeding ``h_max``;
        ``pad`` is the minimum extra length kept outside each wall.
        """
        m = math.ceil((right - left) / h_max - 1e-9)
        h = (right - left) / m
        k = math.ceil(pad / h - 1e-9) if pad > 0 else 0
        return cls(left - k * h, right + k * h, m + 2 * k)

    def cells_in(self, a, b) -> slice:
        """Slice of cells whose centers lie in ``[a, b]``."""
        x = self.centers
        idx = np.flatnonzero((x >= a) & (x <= b))
        if idx.size == 0:
            raise ParameterDomainError(f"no cells in [{a}, {b}]")
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def subgrid(self, cells: slice) -> "Grid":
        start, stop, _ = cells.indices(self.n)
        e = self.edges
        return Grid(float(e[start]), float(e[stop]), stop - start)

    def same_as(self, other: "Grid") -> bool:
        return self.n == other.n and math.isclose(self.x_min, other.x_min, abs_tol=1e-12) \
            and math.isclose(self.x_max, other.x_max, abs_tol=1e-12)

    def to_spec(self):
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n}


@dataclass
class LatticeField:
    """Cell averages ``u_i`` of a density at time ``t``."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise GridMismatchError(f"field has {self.values.shape} values for {self.grid.n} cells")

    @classmethod
    def from_function(cls, grid, f, t=0.0):
        return cls(grid, np.asarray(f(grid.centers), dtype=float) * np.ones(grid.n), t)

    @classmethod
    def point_mass(cls, grid, x0, mass=1.0):
        u = np.zeros(grid.n)
        u[int(np.clip((x0 - grid.x_min) // grid.h, 0, grid.n - 1))] = mass / grid.h
        return cls(grid, u)

    @property
    def x(self):
        return self.grid.centers

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.h)

    def restrict(self, cells: slice) -> "LatticeField":
        return LatticeField(self.grid.subgrid(cells), self.values[cells].copy(), self.t, dict(self.meta))

    def normalized(self) -> "LatticeField":
        m = self.mass()
        return LatticeField(self.grid, self.values / m, self.t, dict(self.meta))

    def copy(self) -> "LatticeField":
        return LatticeField(self.grid, self.values.copy(), self.t, dict(self.meta))


def interior_mass(field: LatticeField, region) -> float:
    """Mass carried by cells whose centers lie in ``region = (a, b)``."""
    a, b = region
    x = field.x
    sel = (x >= a) & (x <= b)
    return float(np.sum(field.values[sel]) * field.grid.h)


def require_same_grid(a: LatticeField, b: LatticeField):
    if not a.grid.same_as(b.grid):
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")
