"""CSV artifacts and the failure marker.

Floats are written with ``repr`` so that files round-trip exactly and are
byte-identical across reruns.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from ..errors import ConfigError
from ..grid import Grid, LatticeField


def write_table(path, columns, data, header_lines=()):
    """Write equal-length columns ``data`` under the names ``columns``."""
    rows = np.column_stack([np.asarray(c, dtype=float) for c in data]) if data else np.empty((0, 0))
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def write_field_csv(path, field: LatticeField):
    """Snapshot as ``x, u, t`` rows."""
    n = field.grid.n
    write_table(path, ["x", "u", "t"], [field.x, field.values, np.full(n, field.t)])


def read_field_csv(path) -> LatticeField:
    """Inverse of :func:`write_field_csv`; the grid is rebuilt from the centers."""
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from None
    if data.shape[1] < 2 or data.shape[0] < 8:
        raise ConfigError(f"{path}: need columns x, u and at least 8 rows")
    x = data[:, 0]
    h = float(np.mean(np.diff(x)))
    if not np.allclose(np.diff(x), h, rtol=1e-9, atol=1e-12):
        raise ConfigError(f"{path}: cell centers are not uniformly spaced")
    grid = Grid(float(x[0] - h / 2), float(x[-1] + h / 2), x.size)
    t = float(data[0, 2]) if data.shape[1] > 2 else 0.0
    return LatticeField(grid, data[:, 1], t)


FAILURE_MARKER = "FAILED.json"


def mark_failure(out_dir, stage, exc):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, FAILURE_MARKER), "w") as fh:
        json.dump({"stage": stage, "error": type(exc).__name__, "message": str(exc)}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")


def clear_failure(out_dir):
    path = os.path.join(out_dir, FAILURE_MARKER)
    if os.path.exists(path):
        os.remove(path)
