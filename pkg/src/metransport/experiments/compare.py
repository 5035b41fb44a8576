"""Field comparison metrics and the run report."""
from __future__ import annotations

import json
import math
import platform
from dataclasses import dataclass, field

import numpy as np
import scipy

from ..errors import NumericalError, ParameterDomainError
from ..grid import LatticeField, require_same_grid


def _region_cells(grid, region):
    if region is None:
        return np.ones(grid.n, dtype=bool)
    a, b = region
    x = grid.centers
    sel = (x >= a) & (x <= b)
    if not np.any(sel):
        raise ParameterDomainError(f"region [{a}, {b}] contains no cells")
    return sel


def compare_fields(a: LatticeField, b: LatticeField, region=None, normalize=False) -> dict:
    """Differences of ``a`` against the reference ``b`` on ``region``.

    Returns ``rel_l2`` (h-weighted L2 of ``a - b`` over that of ``b``), ``sup``
    (largest absolute difference) and ``rel_sup`` (``sup / max|b|``). With
    ``normalize`` both fields are first scaled to unit mass on the region.
    """
    require_same_grid(a, b)
    sel = _region_cells(a.grid, region)
    u, v = a.values[sel], b.values[sel]
    if normalize:
        h = a.grid.h
        u = u / (u.sum() * h)
        v = v / (v.sum() * h)
    diff = u - v
    ref = np.linalg.norm(v)
    sup = float(np.max(np.abs(diff)))
    vmax = float(np.max(np.abs(v)))
    return {
        "rel_l2": float(np.linalg.norm(diff) / ref) if ref > 0 else (0.0 if sup == 0 else math.inf),
        "sup": sup,
        "rel_sup": sup / vmax if vmax > 0 else (0.0 if sup == 0 else math.inf),
    }


def local_discrepancy(me: np.ndarray, pde: np.ndarray) -> np.ndarray:
    """``|me - pde| / |pde|`` pointwise; infinite where the reference vanishes."""
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(me - pde) / np.abs(pde)
    d[(pde == 0) & (me == pde)] = 0.0
    d[(pde == 0) & (me != pde)] = np.inf
    return d


def _wall_width(dist, disc, threshold):
    """Width for one wall; ``dist`` increases inward, ``disc`` follows it."""
    above = np.flatnonzero(disc > threshold)
    if above.size == 0:
        return 0.0
    i = int(above[-1])
    if i + 1 >= dist.size:
        return float(dist[i])
    d0, d1 = disc[i], disc[i + 1]
    if not np.isfinite(d0):
        return float(dist[i + 1])
    frac = (d0 - threshold) / (d0 - d1)
    return float(dist[i] + frac * (dist[i + 1] - dist[i]))


def boundary_layer_widths(me: LatticeField, pde: LatticeField, threshold=0.05, walls=None):
    """Per-wall layer widths ``(left, right)``.

    Both fields are scaled to unit mass. Scanning inward from each wall, the
    width is the distance to the innermost point where the local relative
    discrepancy still exceeds ``threshold``, located by linear interpolation
    of the discrepancy between that cell and its inward neighbor. Each wall
    owns the half of the domain next to it.
    """
    require_same_grid(me, pde)
    if not threshold > 0:
        raise ParameterDomainError("threshold must be > 0")
    grid = me.grid
    left, right = (grid.x_min, grid.x_max) if walls is None else walls
    u = me.values / me.mass()
    v = pde.values / pde.mass()
    disc = local_discrepancy(u, v)
    x = grid.centers
    mid = 0.5 * (left + right)
    lhalf = np.flatnonzero(x <= mid)
    rhalf = np.flatnonzero(x > mid)[::-1]
    wl = _wall_width(x[lhalf] - left, disc[lhalf], threshold) if lhalf.size else 0.0
    wr = _wall_width(right - x[rhalf], disc[rhalf], threshold) if rhalf.size else 0.0
    return wl, wr


def boundary_layer_width(me: LatticeField, pde: LatticeField, threshold=0.05, walls=None) -> float:
    """Larger of the two per-wall widths; 0 when the threshold is never exceeded."""
    return max(boundary_layer_widths(me, pde, threshold, walls))


def versions() -> dict:
    from .. import __version__

    return {
        "metransport": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


@dataclass
class ComparisonReport:
    """Scalar results of one run, with the mass ledger and provenance.

    ``metrics`` maps names to finite floats (or lists of them);
    ``mass_ledger`` holds ``initial``, ``interior``, ``exterior`` and
    ``escaped`` mass; ``provenance`` records the config digest, library
    versions and seed.
    """

    scenario: str
    metrics: dict = field(default_factory=dict)
    mass_ledger: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def add(self, name, value):
        self.metrics[name] = _finite(name, value)

    def update(self, values: dict, prefix=""):
        for k, v in values.items():
            self.add(prefix + k, v)

    def ledger_error(self) -> float:
        led = self.mass_ledger
        if not led:
            return 0.0
        total = led["interior"] + led["exterior"] + led["escaped"]
        return abs(total - led["initial"]) / max(abs(led["initial"]), 1e-300)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "metrics": self.metrics,
            "mass_ledger": self.mass_ledger,
            "provenance": self.provenance,
            "artifacts": sorted(self.artifacts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _finite(name, value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_finite(name, v) for v in value]
    value = float(value)
    if not math.isfinite(value):
        raise NumericalError(f"metric {name!r} is not finite ({value})")
    return value
