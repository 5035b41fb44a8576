"""Named function forms used for position-dependent parameters.

Kernel widths, rate profiles and detailed-balance modulations are functions of
position. To keep them serializable they are drawn from a small catalog:
``constant``, ``linear``, ``sinusoidal``, ``gaussian_bump``, ``tabulated`` and
``product``. Each
form is a frozen dataclass that is callable on scalars or arrays and converts
to and from a JSON-ready dict.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ConfigError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))

    def to_spec(self):
        return {"form": "constant", "value": self.value}


@dataclass(frozen=True)
class Linear:
    """``intercept + slope * x``."""

    intercept: float
    slope: float

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)

    def to_spec(self):
        return {"form": "linear", "intercept": self.intercept, "slope": self.slope}


@dataclass(frozen=True)
class Sinusoidal:
    """``offset + amplitude * sin(2 pi x / period + phase)``."""

    offset: float
    amplitude: float
    period: float = 1.0
    phase: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.offset + self.amplitude * np.sin(2 * np.pi * x / self.period + self.phase)

    def to_spec(self):
        return {
            "form": "sinusoidal",
            "offset": self.offset,
            "amplitude": self.amplitude,
            "period": self.period,
            "phase": self.phase,
        }


@dataclass(frozen=True)
class GaussianBump:
    """``offset + amplitude * exp(-((x - center)/width)^2 / 2)``."""

    center: float
    width: float
    amplitude: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError("bump width must be > 0")

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.width
        return self.offset + self.amplitude * np.exp(-0.5 * z * z)

    def to_spec(self):
        return {"form": "gaussian_bump", "center": self.center, "width": self.width,
                "amplitude": self.amplitude, "offset": self.offset}


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear interpolation, held constant beyond the table ends."""

    x: tuple
    y: tuple

    def __post_init__(self):
        if len(self.x) != len(self.y) or len(self.x) < 2:
            raise ConfigError("tabulated function needs matching x/y with >= 2 entries")
        if np.any(np.diff(self.x) <= 0):
            raise ConfigError("tabulated x must be strictly increasing")

    def __call__(self, x):
        return np.interp(x, self.x, self.y)

    def to_spec(self):
        return {"form": "tabulated", "x": list(self.x), "y": list(self.y)}


@dataclass(frozen=True)
class Product:
    factors: tuple

    def __call__(self, x):
        out = np.ones(np.shape(x))
        for f in self.factors:
            out = out * f(x)
        return out

    def to_spec(self):
        specs = []
        for f in self.factors:
            if not hasattr(f, "to_spec"):
                raise ConfigError(f"factor {f!r} is not a catalog function")
            specs.append(f.to_spec())
        return {"form": "product", "factors": specs}


def as_function(value, path="$") -> Callable:
    """Coerce a number, a catalog spec dict, or a callable into a callable of x."""
    if callable(value):
        return value
    if isinstance(value, bool):
        raise ConfigError("expected a number or a function spec", path)
    if isinstance(value, (int, float)):
        return Constant(float(value))
    if isinstance(value, dict):
        return function_from_spec(value, path)
    raise ConfigError(f"cannot interpret {value!r} as a function of position", path)


def function_from_spec(spec: dict, path="$"):
    form = spec.get("form")
    args = {k: v for k, v in spec.items() if k != "form"}
    try:
        if form == "constant":
            return Constant(float(args["value"]))
        if form == "linear":
            return Linear(float(args["intercept"]), float(args["slope"]))
        if form == "sinusoidal":
            return Sinusoidal(**{k: float(v) for k, v in args.items()})
        if form == "gaussian_bump":
            return GaussianBump(**{k: float(v) for k, v in args.items()})
        if form == "tabulated":
            return Tabulated(tuple(map(float, args["x"])), tuple(map(float, args["y"])))
        if form == "product":
            return Product(tuple(function_from_spec(f, f"{path}.factors[{i}]")
                                 for i, f in enumerate(args["factors"])))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad arguments for form {form!r}: {exc}", path) from None
    raise ConfigError(f"unknown function form {form!r}", f"{path}.form")


def to_spec(f):
    if isinstance(f, (int, float)):
        return float(f)
    if hasattr(f, "to_spec"):
        return f.to_spec()
    raise ConfigError(f"{f!r} has no serializable form")
