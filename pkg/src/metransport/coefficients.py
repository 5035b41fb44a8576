"""Kramers-Moyal reduction of a jump process to diffusion coefficients.

The n-th jump moment per unit time is ``M_n(x) = r(x) * E[delta^n]``. The
Fokker-Planck coefficients are ``D = M_2/2`` and ``V' = M_1``; the Fick drift
follows from ``V = V' - dD/dx``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError, ResolutionError, UndefinedRatioError
from .grid import Grid
from .kernels import JumpKernel, RateField


def km_moment(kernel: JumpKernel, rate: RateField, order: int, x):
    """Jump moment ``M_n(x)``; zero wherever the rate vanishes."""
    if int(order) != order or order < 1:
        raise ParameterDomainError("moment order must be a positive integer")
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x)
    r = rate(flat)
    out = np.zeros(flat.shape)
    active = r > 0
    if np.any(active):
        out[active] = r[active] * kernel.expect(lambda d: d ** order, flat[active])
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def derivative(values, h):
    """Centered second-order differences, second-order one-sided at the ends."""
    return np.gradient(np.asarray(values, dtype=float), h, edge_order=2)


@dataclass
class TransportProfile:
    """Diffusivity ``D`` and both drift conventions on a grid.

    ``Vprime`` is the Fokker-Planck drift and ``V`` the Fick drift; they are
    tied by ``Vprime = V + dD/dx`` (discrete derivative of ``D``), which
    :meth:`from_fpe` and :meth:`from_fick` enforce.
    """

    grid: Grid
    D: np.ndarray
    Vprime: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        self.Vprime = np.asarray(self.Vprime, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        for name in ("D", "Vprime", "V"):
            if getattr(self, name).shape != (self.grid.n,):
                raise ParameterDomainError(f"{name} does not match the grid")
        if np.any(self.D < 0):
            raise ParameterDomainError("D must be non-negative")
        mismatch = self.Vprime - self.V - self.dDdx
        scale = max(np.max(np.abs(self.Vprime)), np.max(np.abs(self.dDdx)), 1e-300)
        if np.max(np.abs(mismatch)) > 1e-9 * scale:
            raise ParameterDomainError("Vprime must equal V + dD/dx")

    @property
    def dDdx(self):
        return derivative(self.D, self.grid.h)

    @classmethod
    def from_fpe(cls, grid, D, Vprime):
        D = np.broadcast_to(np.asarray(D, dtype=float), (grid.n,)).copy()
        Vprime = np.broadcast_to(np.asarray(Vprime, dtype=float), (grid.n,)).copy()
        return cls(grid, D, Vprime, Vprime - derivative(D, grid.h))

    @classmethod
    def from_fick(cls, grid, D, V):
        D = np.broadcast_to(np.asarray(D, dtype=float), (grid.n,)).copy()
        V = np.broadcast_to(np.asarray(V, dtype=float), (grid.n,)).copy()
        return cls(grid, D, V + derivative(D, grid.h), V)

    def restrict(self, cells: slice) -> "TransportProfile":
        sub = self.grid.subgrid(cells)
        return TransportProfile.from_fpe(sub, self.D[cells], self.Vprime[cells])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "D", "Vprime", "V"])
            for row in zip(self.grid.centers, self.D, self.Vprime, self.V):
                w.writerow([repr(float(v)) for v in row])


def check_resolution(kernel: JumpKernel, grid: Grid, stacklevel=3):
    """Enforce ``h <= width/4`` (warning) and ``h <= width`` (error)."""
    width = float(np.min(kernel.width(grid.centers)))
    if grid.h > width:
        raise ResolutionError(f"grid spacing {grid.h:.4g} exceeds kernel width {width:.4g}")
    if grid.h > width / 4 * (1 + 1e-12):
        warnings.warn(f"grid spacing {grid.h:.4g} is coarser than kernel width/4 ({width / 4:.4g})",
                      stacklevel=stacklevel)
    return width


def reduce_to_transport(kernel: JumpKernel, rate: RateField, grid: Grid) -> TransportProfile:
    check_resolution(kernel, grid)
    x = grid.centers
    D = 0.5 * km_moment(kernel, rate, 2, x)
    Vprime = km_moment(kernel, rate, 1, x)
    return TransportProfile.from_fpe(grid, D, Vprime)


def detailed_balance_residual(kernel: JumpKernel, rate: RateField, x, delta):
    """``p(delta, x)/tau(x) - p(-delta, x + delta)/tau(x + delta)``."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    y = x + delta
    forward = kernel.pdf(delta, x) * rate(x)
    backward = kernel.pdf(-delta, y) * rate(y)
    return forward - backward


def truncation_diagnostic(kernel: JumpKernel, rate: RateField, x, L_u, orders=(3, 4)):
    """Weight of the n-th Kramers-Moyal term relative to the diffusive one.

    ``rho_n = |M_n/n!| / (|M_2/2!| L_u^(n-2))`` for a density varying on the
    length scale ``L_u``. Returns ``{n: rho_n}``.
    """
    if not L_u > 0:
        raise ParameterDomainError("L_u must be > 0")
    m2 = np.abs(km_moment(kernel, rate, 2, x)) / 2.0
    if np.any(m2 == 0):
        raise UndefinedRatioError("second moment vanishes: truncation ratio undefined")
    out = {}
    for n in orders:
        mn = np.abs(km_moment(kernel, rate, n, x)) / math.factorial(n)
        out[n] = mn / (m2 * L_u ** (n - 2))
    return out
