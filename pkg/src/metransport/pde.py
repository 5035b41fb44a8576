"""Finite-volume solver for the Fick and Fokker-Planck diffusion forms.

fick:  du/dt = d/dx (D du/dx - V u),      flux F = -D du/dx + V u
fpe:   du/dt = d/dx (d(D u)/dx - V' u),   flux F = -d(D u)/dx + V' u

Fluxes live on cell faces (positive along +x). Interior faces use arithmetic
averages and centered differences; boundary faces eliminate the ghost value
through the boundary condition. Time stepping is forward Euler under
``dt <= 0.4 h^2 / max D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .coefficients import TransportProfile
from .errors import (
    FitRejectedError,
    GridMismatchError,
    ParameterDomainError,
    StabilityError,
)
from .grid import LatticeField

D_FLOOR = 1e-12
CFL = 0.4
KINDS = ("dirichlet", "neumann_flux", "neumann_gradient", "robin")


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition on one wall.

    * ``dirichlet``: ``u = value`` on the wall.
    * ``neumann_flux``: outward flux through the wall equals ``value``.
    * ``neumann_gradient``: ``du/dx = value`` on the wall.
    * ``robin``: ``alpha u + beta du/dn = value`` with ``n`` the outward normal.
    """

    side: str
    kind: str
    value: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ParameterDomainError("side must be 'left' or 'right'")
        if self.kind not in KINDS:
            raise ParameterDomainError(f"kind must be one of {KINDS}")
        if self.kind == "robin" and self.alpha == 0 and self.beta == 0:
            raise ParameterDomainError("robin condition needs (alpha, beta) != (0, 0)")

    @classmethod
    def dirichlet(cls, side, value=0.0):
        return cls(side, "dirichlet", value)

    @classmethod
    def zero_flux(cls, side):
        return cls(side, "neumann_flux", 0.0)

    @classmethod
    def neumann_gradient(cls, side, value=0.0):
        return cls(side, "neumann_gradient", value)

    @classmethod
    def robin(cls, side, alpha, beta, value=0.0):
        return cls(side, "robin", value, alpha, beta)

    def _robin_form(self):
        """(alpha, beta, g) with the derivative taken along the outward normal."""
        if self.kind == "dirichlet":
            return 1.0, 0.0, self.value
        if self.kind == "neumann_gradient":
            sign = 1.0 if self.side == "right" else -1.0
            return 0.0, 1.0, sign * self.value
        return self.alpha, self.beta, self.value

    def to_spec(self):
        spec = {"kind": self.kind, "value": self.value}
        if self.kind == "robin":
            spec.update(alpha=self.alpha, beta=self.beta)
        return spec


@dataclass
class PdeProblem:
    form: str
    profile: TransportProfile
    left: BoundaryCondition
    right: BoundaryCondition
    initial: LatticeField
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form not in ("fick", "fpe"):
            raise ParameterDomainError("form must be 'fick' or 'fpe'")
        if not self.profile.grid.same_as(self.initial.grid):
            raise GridMismatchError("profile and initial field must share the grid")
        if self.left.side != "left" or self.right.side != "right":
            raise ParameterDomainError("boundary conditions are attached to the wrong sides")
        self.meta.setdefault("D_floor", D_FLOOR)

    @property
    def grid(self):
        return self.profile.grid

    @property
    def drift(self):
        return self.profile.V if self.form == "fick" else self.profile.Vprime

    def max_dt(self):
        dmax = max(float(np.max(self.profile.D)), D_FLOOR)
        return CFL * self.grid.h ** 2 / dmax


def _wall_values(a0, a1):
    """Linear extrapolation of cell data to the outer face next to ``a0``."""
    return 1.5 * a0 - 0.5 * a1


def face_fluxes(problem: PdeProblem, u) -> np.ndarray:
    """Fluxes at all ``n + 1`` faces, positive along +x."""
    u = np.asarray(u, dtype=float)
    h = problem.grid.h
    D = np.maximum(problem.profile.D, D_FLOOR)
    V = problem.drift
    F = np.empty(u.size + 1)
    ubar = 0.5 * (u[1:] + u[:-1])
    Vf = 0.5 * (V[1:] + V[:-1])
    if problem.form == "fick":
        Df = 0.5 * (D[1:] + D[:-1])
        F[1:-1] = -Df * (u[1:] - u[:-1]) / h + Vf * ubar
    else:
        Du = D * u
        F[1:-1] = -(Du[1:] - Du[:-1]) / h + Vf * ubar
    F[0] = _boundary_flux(problem, problem.left, u[0], D[0], D[1], V[0], V[1], h)
    F[-1] = _boundary_flux(problem, problem.right, u[-1], D[-1], D[-2], V[-1], V[-2], h)
    return F


def _boundary_flux(problem, bc, u0, D0, D1, V0, V1, h):
    outward = 1.0 if bc.side == "right" else -1.0
    if bc.kind == "neumann_flux":
        return outward * bc.value
    alpha, beta, g = bc._robin_form()
    # du/dn on the wall is one-sided over half a cell: (u_w - u0) / (h/2)
    denom = alpha + 2.0 * beta / h
    if denom == 0:
        raise ParameterDomainError("robin coefficients are singular at this resolution")
    uw = (g + 2.0 * beta * u0 / h) / denom
    Dw = max(_wall_values(D0, D1), D_FLOOR)
    Vw = _wall_values(V0, V1)
    if problem.form == "fick":
        dudx = outward * (uw - u0) * 2.0 / h
        return -Dw * dudx + Vw * uw
    dDu = outward * (Dw * uw - D0 * u0) * 2.0 / h
    return -dDu + Vw * uw


def face_flux(problem: PdeProblem, field: LatticeField, face: int) -> float:
    return float(face_fluxes(problem, field.values)[face])


def step_pde(problem: PdeProblem, field: LatticeField, dt: float) -> LatticeField:
    """Forward-Euler finite-volume update ``u_i -= dt (F_{i+1/2} - F_{i-1/2}) / h``."""
    if not 0 < dt <= problem.max_dt() * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.4g} outside (0, 0.4 h^2/max D = {problem.max_dt():.4g}]")
    F = face_fluxes(problem, field.values)
    u = field.values - dt * np.diff(F) / problem.grid.h
    return LatticeField(field.grid, u, field.t + dt, dict(field.meta))


def tridiagonal(problem: PdeProblem):
    """Coefficients of the (affine) semi-discrete operator ``du/dt = L u + c``.

    The flux divergence of cell ``i`` involves cells ``i-1..i+1`` only, so
    probing :func:`face_fluxes` with three interleaved unit patterns recovers
    ``L`` exactly; ``lower[i]`` multiplies ``u[i]`` in row ``i+1``.
    """
    n = problem.grid.n
    h = problem.grid.h

    def rhs(u):
        return -np.diff(face_fluxes(problem, u)) / h

    c = rhs(np.zeros(n))
    diag = np.empty(n)
    lower = np.empty(n - 1)
    upper = np.empty(n - 1)
    for k in range(3):
        e = np.zeros(n)
        e[k::3] = 1.0
        col = rhs(e) - c
        j = np.arange(k, n, 3)
        diag[j] = col[j]
        below = j[j + 1 < n]
        lower[below] = col[below + 1]
        above = j[j >= 1]
        upper[above - 1] = col[above - 1]
    return lower, diag, upper, c


def _euler_stepper(problem, dt):
    lower, diag, upper, c = tridiagonal(problem)
    lower, diag, upper, c = dt * lower, 1.0 + dt * diag, dt * upper, dt * c

    def step(u):
        out = diag * u + c
        out[1:] += lower * u[:-1]
        out[:-1] += upper * u[1:]
        return out

    return step


def march(problem: PdeProblem, t_end: float, dt=None, field=None, record=None,
          record_every=1) -> LatticeField:
    """Forward-Euler march to ``t_end``; ``record(t, u)`` every ``record_every`` steps."""
    field = problem.initial if field is None else field
    dt_max = problem.max_dt()
    dt = dt_max if dt is None else dt
    if dt > dt_max * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.4g} exceeds 0.4 h^2/max D = {dt_max:.4g}")
    span = t_end - field.t
    if span <= 0:
        return field.copy()
    steps = max(1, math.ceil(span / dt - 1e-9))
    dt = span / steps
    step = _euler_stepper(problem, dt)
    u = field.values.copy()
    t0 = field.t
    for k in range(1, steps + 1):
        u = step(u)
        if record is not None and k % record_every == 0:
            record(t0 + k * dt, u)
    return LatticeField(field.grid, u, t_end, dict(field.meta))


class PdeSteady(NamedTuple):
    field: LatticeField
    residual: float
    converged: bool
    steps: int


def steady_state(problem: PdeProblem, tol=1e-10, max_steps=5_000_000, check_every=200) -> PdeSteady:
    """March until ``max|du/dt| <= tol * max|u| / t_diff`` with ``t_diff = L^2 / max D``.

    Returns with ``converged=False`` when the step budget runs out. A
    vanishing field counts as converged.
    """
    grid = problem.grid
    h = grid.h
    dt = problem.max_dt()
    L = grid.x_max - grid.x_min
    t_diff = L ** 2 / max(float(np.max(problem.profile.D)), D_FLOOR)
    u = problem.initial.values.copy()

    def residual(u):
        rate = np.max(np.abs(np.diff(face_fluxes(problem, u)))) / h
        scale = np.max(np.abs(u))
        if scale < 1e-300:
            return 0.0
        return rate * t_diff / scale

    steps = 0
    res = residual(u)
    floor = 1e-14 * max(np.max(np.abs(u)), 1e-300)
    step = _euler_stepper(problem, dt)
    while res > tol and steps < max_steps:
        for _ in range(check_every):
            u = step(u)
        steps += check_every
        res = residual(u)
        if np.max(np.abs(u)) < floor:
            u = np.zeros_like(u)
            res = 0.0
    t = problem.initial.t + steps * dt
    return PdeSteady(LatticeField(grid, u, t), res, res <= tol, steps)


def decay_rate(problem: PdeProblem, window, dt=None) -> float:
    """Least-squares slope of ``-log(mass)`` over ``window = (t0, t1)``."""
    t0, t1 = window
    if not t1 > t0 >= problem.initial.t:
        raise ParameterDomainError("fit window must satisfy initial t <= t0 < t1")
    times, masses = [], []
    h = problem.grid.h

    def rec(t, u):
        if t >= t0 - 1e-12:
            times.append(t)
            masses.append(float(np.sum(u) * h))

    field = march(problem, t0, dt=dt)
    rec(t0, field.values)
    span = t1 - t0
    step = problem.max_dt() if dt is None else dt
    every = max(1, math.ceil(span / step / 200))
    march(problem, t1, dt=dt, field=field, record=rec, record_every=every)
    return fit_decay(times, masses)


def fit_decay(times, masses) -> float:
    times = np.asarray(times, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if times.size < 3:
        raise FitRejectedError("not enough samples in the fit window")
    if np.any(masses <= 0) or np.any(np.diff(masses) >= 0):
        raise FitRejectedError("mass is not strictly decreasing over the fit window")
    slope = np.polyfit(times, np.log(masses), 1)[0]
    return float(-slope)
