"""Jump kernels p(delta; x), rate fields r(x) = 1/tau(x) and wall transition profiles.

A kernel gives the density of a jump of length ``delta`` for a walker leaving
``x``. All kernels are vectorized: ``pdf(delta, x)`` broadcasts its arguments.
Integrals over ``delta`` use composite Simpson on the kernel support with
``N_QUAD`` nodes, so normalization, Kramers-Moyal moments and the
detailed-balance rate integral all share one quadrature rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar

import numpy as np
from scipy import special
from scipy.interpolate import RegularGridInterpolator

from .errors import (
    ConfigError,
    ConstructionError,
    DegenerateKernelError,
    ParameterDomainError,
)
from .functions import as_function, to_spec

N_QUAD = 401
GAUSS_CUTOFF = 6.0
SQRT2PI = math.sqrt(2.0 * math.pi)
DEFAULT_FLOOR = 1e-6


def simpson_weights(n: int) -> np.ndarray:
    """Unit-spacing composite Simpson weights for an odd number of nodes."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd node count >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


_SIMPSON = simpson_weights(N_QUAD)


def _xarray(x):
    return np.asarray(x, dtype=float)


def _positive(values, name):
    values = np.asarray(values, dtype=float)
    if np.any(~(values > 0)):
        raise ParameterDomainError(f"{name} must be > 0 (got min {np.min(values)!r})")
    return values


class JumpKernel:
    """Common machinery for jump densities.

    Subclasses provide ``pdf``, ``support`` and ``width``. ``support(x)``
    returns the interval ``(lo, hi)`` outside of which the density is zero.
    """

    family: ClassVar[str] = ""
    homogeneous: bool = False
    symmetric: bool = False

    def pdf(self, delta, x):
        raise NotImplementedError

    def support(self, x):
        raise NotImplementedError

    def width(self, x):
        raise NotImplementedError

    def delta_max(self, x=None) -> float:
        """Largest |delta| with non-zero density, over the positions ``x``."""
        if x is None:
            if not self.homogeneous:
                raise ValueError("position-dependent kernel: pass the positions to scan")
            x = 0.0
        lo, hi = self.support(_xarray(x))
        return float(np.max(np.maximum(np.abs(lo), np.abs(hi))))

    def quadrature(self, x, n=N_QUAD):
        """Simpson nodes and weights on the support at each position.

        Returns arrays of shape ``x.shape + (n,)``.
        """
        x = _xarray(x)
        lo, hi = self.support(x)
        t = np.linspace(0.0, 1.0, n)
        nodes = lo[..., None] + (hi - lo)[..., None] * t
        w = simpson_weights(n) if n != N_QUAD else _SIMPSON
        weights = w * ((hi - lo) / (n - 1))[..., None]
        return nodes, weights

    def expect(self, g: Callable, x, n=N_QUAD):
        """Integral of ``g(delta) p(delta; x) d delta`` at every position."""
        x = _xarray(x)
        nodes, weights = self.quadrature(x, n)
        dens = self.pdf(nodes, x[..., None])
        return np.sum(weights * g(nodes) * dens, axis=-1)

    def normalization(self, x):
        return self.expect(np.ones_like, x)

    def to_spec(self) -> dict:
        raise NotImplementedError


def _truncated_normal_mass(cutoff):
    return math.erf(cutoff / math.sqrt(2.0))


@dataclass(frozen=True, eq=False)
class GaussianKernel(JumpKernel):
    """Centered normal jumps, truncated at ``cutoff`` standard deviations and renormalized."""

    sigma: Callable = 0.1
    cutoff: float = GAUSS_CUTOFF
    family: ClassVar[str] = "gaussian"
    symmetric: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "sigma", as_function(self.sigma))
        if not self.cutoff > 0:
            raise ParameterDomainError("cutoff must be > 0")

    @property
    def homogeneous(self):
        return _is_constant(self.sigma)

    def _sigma(self, x):
        return _positive(self.sigma(x), "sigma")

    def center(self, x):
        return np.zeros(np.shape(x))

    def pdf(self, delta, x):
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        s = self._sigma(x)
        z = (delta - self.center(x)) / s
        dens = np.exp(-0.5 * z * z) / (s * SQRT2PI * _truncated_normal_mass(self.cutoff))
        return np.where(np.abs(z) <= self.cutoff, dens, 0.0)

    def cdf(self, delta, x):
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        z = (delta - self.center(x)) / self._sigma(x)
        lo = special.ndtr(-self.cutoff)
        return np.clip((special.ndtr(z) - lo) / (1.0 - 2.0 * lo), 0.0, 1.0)

    def ppf(self, u, x):
        lo = special.ndtr(-self.cutoff)
        z = special.ndtri(lo + np.asarray(u) * (1.0 - 2.0 * lo))
        return self.center(x) + self._sigma(x) * z

    def support(self, x):
        x = _xarray(x)
        s = self._sigma(x)
        c = self.center(x)
        return c - self.cutoff * s, c + self.cutoff * s

    def width(self, x):
        return self._sigma(_xarray(x))

    def to_spec(self):
        return {"family": self.family, "sigma": to_spec(self.sigma), "cutoff": self.cutoff}


@dataclass(frozen=True, eq=False)
class ShiftedGaussianKernel(GaussianKernel):
    """Normal jumps with a position-dependent mean ``mu``; produces a drift V' = mu/tau."""

    mu: Callable = 0.0
    family: ClassVar[str] = "shifted_gaussian"
    symmetric: ClassVar[bool] = False

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "mu", as_function(self.mu))

    @property
    def homogeneous(self):
        return _is_constant(self.sigma) and _is_constant(self.mu)

    def center(self, x):
        return np.asarray(self.mu(x), dtype=float)

    def to_spec(self):
        spec = super().to_spec()
        spec["mu"] = to_spec(self.mu)
        return spec


@dataclass(frozen=True, eq=False)
class TophatKernel(JumpKernel):
    """Uniform jumps on ``[-a, a]``."""

    a: Callable = 0.1
    family: ClassVar[str] = "tophat"
    symmetric: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "a", as_function(self.a))

    @property
    def homogeneous(self):
        return _is_constant(self.a)

    def _a(self, x):
        return _positive(self.a(x), "a")

    def pdf(self, delta, x):
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        a = self._a(x)
        return np.where(np.abs(delta) <= a, 0.5 / a, 0.0)

    def cdf(self, delta, x):
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        a = self._a(x)
        return np.clip((delta + a) / (2.0 * a), 0.0, 1.0)

    def ppf(self, u, x):
        return self._a(x) * (2.0 * np.asarray(u) - 1.0)

    def support(self, x):
        a = self._a(_xarray(x))
        return -a, a

    def width(self, x):
        return self._a(_xarray(x))

    def to_spec(self):
        return {"family": self.family, "a": to_spec(self.a)}


@dataclass(frozen=True)
class SymmetricShape:
    """Base function ``s(|delta|) = amplitude * g(|delta| / width)`` with unit-peak ``g``.

    ``g`` is ``exp(-z^2/2)`` (truncated at 6) for ``"gaussian"`` and the
    indicator of ``|z| <= 1`` for ``"tophat"``.
    """

    kind: str = "gaussian"
    width: float = 0.05
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "tophat"):
            raise ParameterDomainError(f"unknown base shape {self.kind!r}")
        if not self.width > 0:
            raise ParameterDomainError("base width must be > 0")
        if not self.amplitude > 0:
            raise ParameterDomainError("base amplitude must be > 0")

    @property
    def reach(self):
        return GAUSS_CUTOFF * self.width if self.kind == "gaussian" else self.width

    def __call__(self, delta):
        z = np.abs(np.asarray(delta, dtype=float)) / self.width
        if self.kind == "gaussian":
            return np.where(z <= GAUSS_CUTOFF, self.amplitude * np.exp(-0.5 * z * z), 0.0)
        return np.where(z <= 1.0, self.amplitude, 0.0)

    @classmethod
    def unit_rate(cls, kind, width):
        """Shape whose integral is one, so a flat modulation gives rate 1."""
        if kind == "gaussian":
            return cls(kind, width, 1.0 / (width * SQRT2PI * _truncated_normal_mass(GAUSS_CUTOFF)))
        return cls(kind, width, 0.5 / width)

    def to_spec(self):
        return {"shape": self.kind, "width": self.width, "amplitude": self.amplitude}


@dataclass(frozen=True, eq=False)
class DetailedBalanceKernel(JumpKernel):
    """Kernel built from the symmetric rate ``k(x -> x + d) = s(|d|) phi(x + d/2)``.

    The jump density is ``k / r(x)`` with ``r(x)`` the integral of ``k`` over
    ``d``; use :func:`build_detailed_balance_kernel` to get the matching rate.
    """

    base: SymmetricShape = field(default_factory=SymmetricShape)
    phi: Callable = 1.0
    reach: float | None = None
    family: ClassVar[str] = "detailed_balance"
    symmetric: ClassVar[bool] = False
    _chunk: ClassVar[int] = 4096

    def __post_init__(self):
        object.__setattr__(self, "phi", as_function(self.phi))
        reach = self.base.reach if self.reach is None else min(self.reach, self.base.reach)
        if not reach > 0:
            raise ParameterDomainError("delta_max must be > 0")
        object.__setattr__(self, "reach", float(reach))

    @property
    def homogeneous(self):
        return _is_constant(self.phi)

    def rate_kernel(self, delta, x):
        """``k(x -> x + delta)``; symmetric under exchanging the two endpoints."""
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        inside = np.abs(delta) <= self.reach
        return np.where(inside, self.base(delta) * self.phi(x + 0.5 * delta), 0.0)

    def rate(self, x):
        """Total jump rate ``1/tau(x)``: Simpson integral of ``k`` over the support."""
        x = _xarray(x)
        flat = x.reshape(-1)
        out = np.empty_like(flat)
        nodes = np.linspace(-self.reach, self.reach, N_QUAD)
        w = _SIMPSON * (2.0 * self.reach / (N_QUAD - 1))
        for start in range(0, flat.size, self._chunk):
            xs = flat[start:start + self._chunk]
            out[start:start + self._chunk] = self.rate_kernel(nodes, xs[:, None]) @ w
        return out.reshape(x.shape)

    def pdf(self, delta, x):
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        r = self.rate(x)
        if np.any(~(r > 0)):
            raise DegenerateKernelError("zero rate integral: the detailed-balance kernel is degenerate")
        return self.rate_kernel(delta, x) / r

    def expect(self, g: Callable, x, n=N_QUAD):
        # the rate depends on x only, so it is computed once per position
        x = _xarray(x)
        nodes, weights = self.quadrature(x, n)
        r = self.rate(x)
        if np.any(~(r > 0)):
            raise DegenerateKernelError("zero rate integral: the detailed-balance kernel is degenerate")
        k = self.rate_kernel(nodes, x[..., None])
        return np.sum(weights * g(nodes) * k, axis=-1) / r

    def support(self, x):
        x = _xarray(x)
        return np.full(x.shape, -self.reach), np.full(x.shape, self.reach)

    def width(self, x):
        return np.full(np.shape(x), self.base.width)

    def to_spec(self):
        return {
            "family": self.family,
            "base": self.base.to_spec(),
            "modulation": to_spec(self.phi),
            "delta_max": self.reach,
        }


@dataclass(frozen=True, eq=False)
class TabulatedKernel(JumpKernel):
    """Density sampled on a (position, jump) table, bilinearly interpolated.

    Rows are renormalized with Simpson's rule at construction; positions
    outside the table use the nearest row.
    """

    delta: tuple = ()
    x: tuple = ()
    density: tuple = ()
    family: ClassVar[str] = "tabulated"

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        xs = np.asarray(self.x, dtype=float)
        table = np.asarray(self.density, dtype=float)
        if d.ndim != 1 or d.size < 3 or d.size % 2 == 0:
            raise ParameterDomainError("tabulated kernel needs an odd number (>= 3) of delta nodes")
        if not np.allclose(np.diff(d), d[1] - d[0]):
            raise ParameterDomainError("tabulated delta nodes must be uniform")
        if xs.ndim != 1 or xs.size < 1 or table.shape != (xs.size, d.size):
            raise ParameterDomainError("density table must have shape (len(x), len(delta))")
        if np.any(table < 0):
            raise ParameterDomainError("tabulated density must be non-negative")
        norm = table @ (simpson_weights(d.size) * (d[1] - d[0]))
        if np.any(norm <= 0):
            raise DegenerateKernelError("tabulated row with zero mass")
        table = table / norm[:, None]
        object.__setattr__(self, "_d", d)
        object.__setattr__(self, "_x", xs)
        object.__setattr__(self, "_table", table)
        if xs.size > 1:
            interp = RegularGridInterpolator((xs, d), table, bounds_error=False, fill_value=0.0)
        else:
            interp = None
        object.__setattr__(self, "_interp", interp)

    @property
    def homogeneous(self):
        return self._x.size == 1

    def pdf(self, delta, x):
        delta, x = np.broadcast_arrays(_xarray(delta), _xarray(x))
        if self._interp is None:
            return np.interp(delta, self._d, self._table[0], left=0.0, right=0.0)
        xc = np.clip(x, self._x[0], self._x[-1])
        pts = np.stack([xc, delta], axis=-1)
        return self._interp(pts)

    def support(self, x):
        x = _xarray(x)
        return np.full(x.shape, self._d[0]), np.full(x.shape, self._d[-1])

    def width(self, x):
        x = _xarray(x)
        mean = self.expect(lambda d: d, x)
        second = self.expect(lambda d: d * d, x)
        return np.sqrt(np.maximum(second - mean ** 2, 0.0))

    def to_spec(self):
        return {
            "family": self.family,
            "delta": self._d.tolist(),
            "x": self._x.tolist(),
            "density": self._table.tolist(),
        }


def _is_constant(f):
    from .functions import Constant

    return isinstance(f, Constant)


@dataclass(frozen=True)
class TransitionProfile:
    """Smooth wall multiplier ``chi(x)``.

    ``chi`` equals 1 at distance >= ``width`` inside the wall at ``x_b`` and
    ``floor`` at distance >= ``width`` outside it, with a cubic smoothstep in
    between. ``side="upper"`` puts the exterior at ``x > x_b``.
    """

    x_b: float
    width: float
    floor: float = DEFAULT_FLOOR
    side: str = "upper"

    def __post_init__(self):
        if self.side not in ("upper", "lower"):
            raise ParameterDomainError("side must be 'upper' or 'lower'")
        if not 0.0 <= self.floor <= 1.0:
            raise ParameterDomainError("floor must lie in [0, 1]")
        if not self.width >= 0:
            raise ParameterDomainError("transition width must be >= 0")

    def __call__(self, x):
        x = _xarray(x)
        outward = x - self.x_b if self.side == "upper" else self.x_b - x
        if self.width == 0:
            ramp = (outward >= 0).astype(float)
        else:
            with np.errstate(over="ignore"):
                ramp = np.clip((outward + self.width) / (2.0 * self.width), 0.0, 1.0)
        return self.floor + (1.0 - self.floor) * (1.0 - ramp * ramp * (3.0 - 2.0 * ramp))

    def to_spec(self):
        return {"x_b": self.x_b, "width": self.width, "floor": self.floor, "side": self.side}


def interval_walls(left, right, width, floor=DEFAULT_FLOOR):
    """The two profiles confining transport to ``[left, right]``."""
    return (
        TransitionProfile(left, width, floor, side="lower"),
        TransitionProfile(right, width, floor, side="upper"),
    )


@dataclass(frozen=True)
class RateField:
    """Jump rate ``r(x) = 1/tau(x)``, optionally multiplied by wall profiles.

    ``r = 0`` means ``tau`` is infinite: a walker there never jumps again.
    """

    base: Callable = 1.0
    suppression: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "base", as_function(self.base))
        object.__setattr__(self, "suppression", tuple(self.suppression))

    def __call__(self, x):
        x = _xarray(x)
        r = np.asarray(self.base(x), dtype=float)
        if np.any(r < 0):
            raise ParameterDomainError("jump rate must be non-negative")
        for profile in self.suppression:
            r = r * profile(x)
        return r

    def tau(self, x):
        r = self(x)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), np.inf)

    def to_spec(self):
        base = self.base
        if isinstance(base, _BoundRate):
            raise ConfigError("rate derived from a detailed-balance kernel is rebuilt from the kernel")
        return {"base": to_spec(base), "suppression": [p.to_spec() for p in self.suppression]}


@dataclass(frozen=True, eq=False)
class _BoundRate:
    kernel: DetailedBalanceKernel

    def __call__(self, x):
        return self.kernel.rate(x)


def evaluate_kernel(kernel: JumpKernel, delta, x):
    """Jump density ``p(delta; x)``; exactly zero outside the kernel support."""
    return kernel.pdf(delta, x)


def mean_jump_length(kernel: JumpKernel, x=0.0):
    """Average jump length ``<|delta|>`` at ``x``."""
    return kernel.expect(np.abs, x)


def apply_suppression(rate: RateField, profile: TransitionProfile) -> RateField:
    return RateField(rate.base, rate.suppression + (profile,))


def build_detailed_balance_kernel(s: SymmetricShape, phi, delta_max=None, grid=None):
    """Kernel and rate satisfying detailed balance by construction.

    The pair rate ``k(x -> y) = s(|y - x|) phi((x + y)/2)`` is symmetric in its
    endpoints. ``1/tau(x)`` is the integral of ``k`` over jump lengths and
    ``p = k tau``. When ``grid`` is given, ``phi`` and the rate are checked on
    its cell centers.
    """
    kernel = DetailedBalanceKernel(base=s, phi=phi, reach=delta_max)
    if grid is not None:
        x = grid.centers
        phis = np.asarray(kernel.phi(x), dtype=float)
        if np.any(~(phis > 0)):
            raise ConstructionError("modulation phi must be > 0 on the whole grid")
        if np.any(~(kernel.rate(x) > 0)):
            raise DegenerateKernelError("zero rate integral on the grid")
    return kernel, RateField(_BoundRate(kernel))


def kernel_from_spec(spec: dict, path="$.kernel") -> JumpKernel:
    """Build a kernel from its JSON form (``{"family": ..., <params>}``)."""
    spec = dict(spec)
    family = spec.pop("family", None)
    extra = set(spec) - _FAMILY_KEYS.get(family, set(spec))
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"parameter {key!r} does not apply to family {family!r}", f"{path}.{key}")
    try:
        if family == "gaussian":
            return GaussianKernel(sigma=as_function(spec.pop("sigma"), f"{path}.sigma"),
                                  **_floats(spec, "cutoff"))
        if family == "shifted_gaussian":
            return ShiftedGaussianKernel(sigma=as_function(spec.pop("sigma"), f"{path}.sigma"),
                                         mu=as_function(spec.pop("mu", 0.0), f"{path}.mu"),
                                         **_floats(spec, "cutoff"))
        if family == "tophat":
            return TophatKernel(a=as_function(spec.pop("a"), f"{path}.a"))
        if family == "detailed_balance":
            base = spec.pop("base")
            kind = base.get("shape", "gaussian")
            if base.get("amplitude") is None:
                shape = SymmetricShape.unit_rate(kind, float(base["width"]))
            else:
                shape = SymmetricShape(kind, float(base["width"]), float(base["amplitude"]))
            return DetailedBalanceKernel(base=shape,
                                         phi=as_function(spec.pop("modulation", 1.0), f"{path}.modulation"),
                                         reach=spec.pop("delta_max", None))
        if family == "tabulated":
            return TabulatedKernel(tuple(spec.pop("delta")), tuple(spec.pop("x")),
                                   tuple(map(tuple, spec.pop("density"))))
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc}", path) from None
    raise ConfigError(f"unknown kernel family {family!r}", f"{path}.family")


_FAMILY_KEYS = {
    "gaussian": {"sigma", "cutoff"},
    "shifted_gaussian": {"sigma", "mu", "cutoff"},
    "tophat": {"a"},
    "detailed_balance": {"base", "modulation", "delta_max"},
    "tabulated": {"delta", "x", "density"},
}


def _floats(spec, *keys):
    return {k: float(spec.pop(k)) for k in keys if k in spec}
