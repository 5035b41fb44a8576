"""Lattice discretization of the jump master equation.

``du_i/dt = sum_j W_ij u_j h - r_i u_i`` with ``W_ij = p(x_i - x_j; x_j) r_j``
sampled at cell centers. Each column is first normalized to its sum over the
infinite lattice, so that interior columns carry exactly ``r_j``. Jumps that
would leave the grid are then either kept in place (``conservative``: the
walker stays, preserving detailed balance and total mass) or removed
(``open``: the deficit is booked as escaped mass).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import check_resolution
from .errors import (
    ConvergenceError,
    DegenerateKernelError,
    ParameterDomainError,
    StabilityError,
)
from .grid import Grid, LatticeField, interior_mass  # noqa: F401  (re-exported)
from .kernels import JumpKernel, RateField

CLOSURES = ("conservative", "open")


@dataclass
class RateMatrix:
    """Sparse jump-rate matrix on a grid.

    ``W`` holds ``W_ij`` in 1/(length time); ``loss`` the diagonal loss rates
    ``r_j``; ``escape`` the per-column rate at which mass leaves the grid
    (all zero for the conservative closure).
    """

    grid: Grid
    W: sp.csr_matrix
    loss: np.ndarray
    escape: np.ndarray
    closure: str

    @property
    def generator(self) -> sp.csr_matrix:
        """``W h - diag(loss)``, the matrix acting on cell values."""
        if not hasattr(self, "_generator"):
            self._generator = (self.W * self.grid.h - sp.diags(self.loss)).tocsr()
        return self._generator

    def column_sums(self):
        return np.asarray(self.W.sum(axis=0)).ravel() * self.grid.h

    @property
    def active(self):
        return self.loss > 0

    def to_triplets(self, path):
        coo = self.W.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write("# i j w\n")
            for i, j, w in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{i} {j} {float(w)!r}\n")


def assemble_generator(kernel: JumpKernel, rate: RateField, grid: Grid,
                       closure: str = "conservative") -> RateMatrix:
    if closure not in CLOSURES:
        raise ParameterDomainError(f"closure must be one of {CLOSURES}")
    check_resolution(kernel, grid)
    x = grid.centers
    h = grid.h
    r = rate(x)
    reach = kernel.delta_max(x)
    b = max(1, math.ceil(reach / h - 1e-9))
    offsets = np.arange(-b, b + 1)

    active = np.flatnonzero(r > 0)
    dens = np.zeros((offsets.size, grid.n))
    if active.size:
        dens[:, active] = kernel.pdf(offsets[:, None] * h, x[None, active])
    lattice_sum = dens.sum(axis=0) * h
    bad = (r > 0) & ~(lattice_sum > 0)
    if np.any(bad):
        raise DegenerateKernelError(f"kernel unresolved on the lattice at x={x[bad][0]:.4g}")
    scale = np.zeros(grid.n)
    scale[active] = r[active] / lattice_sum[active]
    vals = dens * scale

    rows = offsets[:, None] + np.arange(grid.n)[None, :]
    cols = np.broadcast_to(np.arange(grid.n), rows.shape)
    keep = (rows >= 0) & (rows < grid.n) & (vals != 0)
    W = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(grid.n, grid.n))
    deficit = r - np.asarray(W.sum(axis=0)).ravel() * h

    if closure == "conservative":
        W = (W + sp.diags(deficit / h)).tocsr()
        escape = np.zeros(grid.n)
    else:
        escape = np.maximum(deficit, 0.0)
        over = deficit < 0
        if np.any(over):
            W = (W + sp.diags(np.where(over, deficit / h, 0.0))).tocsr()
    W.sort_indices()
    return RateMatrix(grid, W, r, escape, closure)


def max_stable_dt(gen: RateMatrix) -> float:
    r = gen.loss[gen.active]
    return 0.5 / r.max() if r.size else math.inf


def step_me(field: LatticeField, gen: RateMatrix, dt: float) -> LatticeField:
    """One classical Runge-Kutta step of the master equation."""
    if not dt > 0:
        raise StabilityError("time step must be positive")
    if dt > max_stable_dt(gen) * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.4g} exceeds 0.5 * min tau = {max_stable_dt(gen):.4g}")
    u = _rk4(gen.generator, field.values, dt)
    return LatticeField(field.grid, u, field.t + dt, dict(field.meta))


def _rk4(G, u, dt):
    k1 = G @ u
    k2 = G @ (u + 0.5 * dt * k1)
    k3 = G @ (u + 0.5 * dt * k2)
    k4 = G @ (u + dt * k3)
    return u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve(field: LatticeField, gen: RateMatrix, t_end: float, dt=None, record=None):
    """March to ``t_end``; ``record(field)`` is called after every step if given."""
    dt_max = max_stable_dt(gen)
    dt = dt_max if dt is None else dt
    if dt > dt_max * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.4g} exceeds 0.5 * min tau = {dt_max:.4g}")
    span = t_end - field.t
    if span <= 0:
        return field.copy()
    steps = max(1, math.ceil(span / dt - 1e-9))
    dt = span / steps
    G = gen.generator
    u = field.values.copy()
    t0 = field.t
    for k in range(1, steps + 1):
        u = _rk4(G, u, dt)
        if record is not None:
            record(LatticeField(field.grid, u, t0 + k * dt))
    return LatticeField(field.grid, u, t_end, dict(field.meta))


def evolve_with_escape(field: LatticeField, gen: RateMatrix, t_end: float, dt=None):
    """March to ``t_end`` and return ``(field, escaped_mass)``.

    The escaped mass is integrated as an extra state component with the same
    Runge-Kutta steps, so ``mass(t_end) + escaped`` equals the initial mass to
    round-off.
    """
    dt_max = max_stable_dt(gen)
    dt = dt_max if dt is None else dt
    if dt > dt_max * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.4g} exceeds 0.5 * min tau = {dt_max:.4g}")
    span = t_end - field.t
    if span <= 0:
        return field.copy(), 0.0
    n = field.grid.n
    steps = max(1, math.ceil(span / dt - 1e-9))
    dt = span / steps
    out_row = sp.csr_matrix(gen.escape[None, :] * field.grid.h)
    G = sp.bmat([[gen.generator, None], [out_row, sp.csr_matrix((1, 1))]]).tocsr()
    u = np.append(field.values, 0.0)
    for _ in range(steps):
        u = _rk4(G, u, dt)
    return LatticeField(field.grid, u[:n], t_end, dict(field.meta)), float(u[n])


class SteadyResult(NamedTuple):
    field: LatticeField
    residual: float
    converged: bool


def _hnorm(v, h):
    return math.sqrt(float(np.dot(v, v)) * h)


def evolve_to_steady(field: LatticeField, gen: RateMatrix, tol: float = 1e-10,
                     t_max: float = 1e6, dt=None, check_every: int = 50,
                     tau_ref=None) -> SteadyResult:
    """March until ``||du/dt|| <= tol ||u|| / tau_ref`` (h-weighted L2) or ``t_max``.

    ``tau_ref`` defaults to the shortest waiting time on the grid. A run that
    hits ``t_max`` returns with ``converged=False``.
    """
    G = gen.generator
    h = field.grid.h
    if tau_ref is None:
        tau_ref = 1.0 / gen.loss.max() if np.any(gen.active) else 1.0
    dt = max_stable_dt(gen) if dt is None else dt
    if not np.isfinite(dt):
        return SteadyResult(field.copy(), 0.0, True)
    if dt > max_stable_dt(gen) * (1 + 1e-12):
        raise StabilityError("dt exceeds 0.5 * min tau")
    u = field.values.copy()
    t = field.t

    def residual(u):
        norm = _hnorm(u, h)
        if norm == 0:
            return 0.0
        return _hnorm(G @ u, h) * tau_ref / norm

    res = residual(u)
    while res > tol and t < t_max:
        for _ in range(check_every):
            u = _rk4(G, u, dt)
        t += check_every * dt
        res = residual(u)
    return SteadyResult(LatticeField(field.grid, u, t, dict(field.meta)), res, res <= tol)


class SlowestMode(NamedTuple):
    rate: float
    vector: np.ndarray
    cells: np.ndarray
    iterations: int
    residual: float


def slowest_mode(gen: RateMatrix, interior=None, tol=1e-8, max_iter=2000) -> SlowestMode:
    """Inverse power iteration on the generator restricted to ``interior`` cells.

    ``interior`` is a slice, index array or boolean mask; by default all cells
    with a positive jump rate. Returns the smallest decay rate and its
    non-negative eigenvector, normalized to unit mass on the interior.
    """
    cells = _cells(gen, interior)
    if cells.size == 0:
        raise ParameterDomainError("interior is empty")
    M = (-gen.generator[cells][:, cells]).tocsc()
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise ConvergenceError(f"interior block is singular (no decay): {exc}") from None
    v = np.ones(cells.size) / math.sqrt(cells.size)
    lam = math.nan
    res = math.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(v)
        if not np.all(np.isfinite(y)):
            raise ConvergenceError("inverse iteration produced non-finite values")
        v = y / np.linalg.norm(y)
        Mv = M @ v
        lam = float(v @ Mv)
        res = float(np.linalg.norm(Mv - lam * v) / abs(lam)) if lam != 0 else math.inf
        if res <= tol:
            break
    else:
        raise ConvergenceError(f"inverse iteration did not converge (residual {res:.3g})")
    v = np.abs(v)
    v /= v.sum() * gen.grid.h
    return SlowestMode(lam, v, cells, it, res)


def slowest_decay_rate(gen: RateMatrix, interior=None, tol=1e-8) -> float:
    return slowest_mode(gen, interior, tol).rate


def _cells(gen, interior):
    if interior is None:
        return np.flatnonzero(gen.active)
    if isinstance(interior, slice):
        return np.arange(gen.grid.n)[interior]
    interior = np.asarray(interior)
    if interior.dtype == bool:
        return np.flatnonzero(interior)
    return interior.astype(int)
