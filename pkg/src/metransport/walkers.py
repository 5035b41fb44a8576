"""Continuous-time random walks realizing the same jump process as the master equation.

Each walker waits an exponential time of mean ``tau(x)`` at its departure
point, then jumps by ``delta ~ p(.; x)``. A walker standing where the rate is
zero is frozen for good. Random numbers come from :mod:`metransport.rng`, keyed
by ``(seed, walker index, jump count)``, so results do not depend on how the
ensemble is split across threads or across resumed runs.
"""
from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from . import rng
from .errors import DegenerateKernelError, ParameterDomainError, ResolutionError
from .grid import Grid
from .kernels import N_QUAD, JumpKernel, RateField

CHUNK = 8192


@dataclass
class WalkerEnsemble:
    """Walker state: position, time of the last jump, frozen flag and jump count."""

    positions: np.ndarray
    clocks: np.ndarray
    frozen: np.ndarray
    jumps: np.ndarray
    seed: int

    @classmethod
    def start(cls, positions, seed, t0=0.0):
        positions = np.array(positions, dtype=float, ndmin=1)
        n = positions.size
        return cls(positions, np.full(n, float(t0)), np.zeros(n, dtype=bool),
                   np.zeros(n, dtype=np.uint64), int(seed))

    @property
    def size(self):
        return self.positions.size

    def copy(self):
        return WalkerEnsemble(self.positions.copy(), self.clocks.copy(), self.frozen.copy(),
                              self.jumps.copy(), self.seed)


_MAGIC = b"MEWALK01"


def save_checkpoint(ens: WalkerEnsemble, path):
    """Write the ensemble as a flat little-endian record.

    Layout: 8-byte magic ``MEWALK01``; uint64 walker count ``n``; uint64 seed;
    then four float64 arrays of length ``n`` in this order: positions, clocks
    (time of the last jump), frozen flags (0.0/1.0), jump counts.
    """
    n = ens.size
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", n, ens.seed & 0xFFFFFFFFFFFFFFFF))
        for arr in (ens.positions, ens.clocks, ens.frozen.astype(float), ens.jumps.astype(float)):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> WalkerEnsemble:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ParameterDomainError("not a walker checkpoint")
    n, seed = struct.unpack("<QQ", data[8:24])
    arrays = np.frombuffer(data[24:], dtype="<f8")
    if arrays.size != 4 * n:
        raise ParameterDomainError("truncated walker checkpoint")
    pos, clk, frz, jmp = arrays.reshape(4, n).astype(float)
    return WalkerEnsemble(pos.copy(), clk.copy(), frz != 0, jmp.astype(np.uint64), int(seed))


class JumpSampler:
    """Draws jump lengths and rates at arbitrary positions.

    Gaussian and tophat families invert their CDF in closed form. Other
    families use a CDF tabulated per position bin of ``bins`` (required), and
    their rate is also taken at the bin center.
    """

    def __init__(self, kernel: JumpKernel, rate: RateField, bins: Grid | None = None):
        self.kernel = kernel
        self.rate = rate
        self.bins = bins
        self.tabulated = not hasattr(kernel, "ppf")
        if self.tabulated:
            if bins is None:
                raise ParameterDomainError(f"{kernel.family} kernels need a position-bin grid")
            self._build_table(bins)

    def _build_table(self, bins):
        c = bins.centers
        lo, hi = self.kernel.support(c)
        if not (np.allclose(lo, lo[0]) and np.allclose(hi, hi[0])):
            raise ParameterDomainError("tabulated sampling needs a position-independent support")
        nodes = np.linspace(lo[0], hi[0], N_QUAD)
        dens = self.kernel.pdf(nodes[None, :], c[:, None])
        steps = 0.5 * (dens[:, 1:] + dens[:, :-1]) * np.diff(nodes)
        cdf = np.concatenate([np.zeros((c.size, 1)), np.cumsum(steps, axis=1)], axis=1)
        if np.any(cdf[:, -1] <= 0):
            raise DegenerateKernelError("zero-mass row in the sampling table")
        cdf /= cdf[:, -1:]
        self._nodes = nodes
        self._flat = (cdf + np.arange(c.size)[:, None]).ravel()
        self._rates = self.rate(c)

    def _bin(self, x):
        b = self.bins
        return np.clip(((x - b.x_min) // b.h).astype(int), 0, b.n - 1)

    def rate_at(self, x):
        if self.tabulated:
            return self._rates[self._bin(x)]
        return self.rate(x)

    def sample(self, x, u):
        if not self.tabulated:
            return self.kernel.ppf(u, x)
        b = self._bin(x)
        m = self._nodes.size
        q = u + b
        j = np.searchsorted(self._flat, q, side="right")
        j = np.clip(j, b * m + 1, b * m + m - 1)
        c0 = self._flat[j - 1]
        c1 = self._flat[j]
        span = c1 - c0
        frac = np.where(span > 0, (q - c0) / np.where(span > 0, span, 1.0), 0.5)
        k = j - b * m
        return self._nodes[k - 1] + frac * (self._nodes[k] - self._nodes[k - 1])


class JumpRecords(NamedTuple):
    x: np.ndarray
    delta: np.ndarray
    tau: np.ndarray

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if p is not None]
        if not parts:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls._fields))

    def to_csv(self, path):
        _write_csv(path, ["x", "delta", "tau"], np.column_stack(self))


class WalkerRun(NamedTuple):
    ensemble: WalkerEnsemble
    snapshot_times: np.ndarray
    snapshot_positions: np.ndarray
    snapshot_frozen: np.ndarray
    jumps: JumpRecords | None


def _advance_chunk(sampler, seed, idx, pos, clk, frz, njump, t_until, snaps, record):
    n = idx.size
    snap_pos = np.full((snaps.size, n), np.nan)
    snap_frz = np.zeros((snaps.size, n), dtype=bool)
    rec = [] if record else None
    live = np.arange(n)
    while live.size:
        x = pos[live]
        r = sampler.rate_at(x)
        newly = (r <= 0) & ~frz[live]
        frz[live[newly]] = True
        fz = frz[live]
        u = rng.uniform(seed, idx[live], njump[live], rng.STREAM_WAIT)
        with np.errstate(divide="ignore"):
            wait = np.where(fz, np.inf, -np.log(u) / np.where(fz, 1.0, r))
        t_next = clk[live] + wait
        for m, s in enumerate(snaps):
            hit = (clk[live] <= s) & (s < t_next)
            if np.any(hit):
                snap_pos[m, live[hit]] = x[hit]
                snap_frz[m, live[hit]] = fz[hit]
        go = t_next <= t_until
        mv = live[go]
        if mv.size == 0:
            break
        uj = rng.uniform(seed, idx[mv], njump[mv], rng.STREAM_JUMP)
        d = sampler.sample(pos[mv], uj)
        if rec is not None:
            rec.append(JumpRecords(pos[mv].copy(), d, 1.0 / r[go]))
        pos[mv] += d
        clk[mv] = t_next[go]
        njump[mv] += np.uint64(1)
        live = mv
    return snap_pos, snap_frz, (JumpRecords.concat(rec) if record else None)


def run_walkers(kernel, rate, ensemble: WalkerEnsemble, t_end, snapshot_times=(),
                bins: Grid | None = None, record_jumps=False, workers=1) -> WalkerRun:
    """Advance ``ensemble`` (a copy) to ``t_end``, recording positions at ``snapshot_times``.

    Snapshot times must be sorted, not earlier than any walker clock and not
    later than ``t_end``.
    """
    snaps = np.asarray(snapshot_times, dtype=float)
    if snaps.size and (np.any(np.diff(snaps) < 0) or snaps[-1] > t_end):
        raise ParameterDomainError("snapshot times must be sorted and <= t_end")
    ens = ensemble.copy()
    sampler = JumpSampler(kernel, rate, bins)
    n = ens.size
    idx = np.arange(n, dtype=np.uint64)
    chunks = [slice(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]

    def work(sl):
        return _advance_chunk(sampler, ens.seed, idx[sl], ens.positions[sl], ens.clocks[sl],
                              ens.frozen[sl], ens.jumps[sl], t_end, snaps, record_jumps)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(sl) for sl in chunks]
    snap_pos = np.concatenate([r[0] for r in results], axis=1) if results else np.empty((snaps.size, 0))
    snap_frz = np.concatenate([r[1] for r in results], axis=1) if results else np.empty((snaps.size, 0), bool)
    jumps = JumpRecords.concat([r[2] for r in results]) if record_jumps else None
    return WalkerRun(ens, snaps, snap_pos, snap_frz, jumps)


@dataclass
class EmpiricalProfile:
    """Binned walker statistics.

    For snapshots, ``density`` integrates to the fraction of walkers that are
    neither frozen nor outside the bins. For jump statistics, ``drift`` and
    ``diffusivity`` hold the per-bin estimates of V' and D with standard errors;
    ``reported`` flags bins with enough samples.
    """

    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    n_total: int
    t: float | None = None
    frozen_fraction: float = 0.0
    outside_fraction: float = 0.0
    frozen_counts: np.ndarray | None = None
    drift: np.ndarray | None = None
    drift_se: np.ndarray | None = None
    diffusivity: np.ndarray | None = None
    diffusivity_se: np.ndarray | None = None
    reported: np.ndarray | None = None

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def to_csv(self, path):
        cols = ["x", "count", "density"]
        data = [self.centers, self.counts, self.density]
        if self.drift is not None:
            cols += ["Vprime", "Vprime_se", "D", "D_se", "reported"]
            data += [self.drift, self.drift_se, self.diffusivity, self.diffusivity_se,
                     self.reported.astype(int)]
        header = [] if self.t is None else [f"# t={self.t!r}"]
        _write_csv(path, cols, np.column_stack(data), header)


def _edges(bins):
    if isinstance(bins, Grid):
        return bins.edges
    return np.asarray(bins, dtype=float)


def histogram(positions, frozen, edges, t=None) -> EmpiricalProfile:
    edges = np.asarray(edges, dtype=float)
    n = positions.size
    free = positions[~frozen]
    counts, _ = np.histogram(free, edges)
    inside = counts.sum()
    widths = np.diff(edges)
    fcounts, _ = np.histogram(positions[frozen], edges)
    density = counts / (n * widths) if n else np.zeros_like(widths)
    return EmpiricalProfile(edges, counts, density, n, t,
                            frozen_fraction=float(frozen.sum()) / n if n else 0.0,
                            outside_fraction=float(free.size - inside) / n if n else 0.0,
                            frozen_counts=fcounts)


def simulate_ctrw(kernel, rate, n_walkers, t_end, snapshot_times, seed, x0=0.5,
                  bins=None, sampler_bins=None, workers=1) -> list[EmpiricalProfile]:
    """Binned snapshots of a walker ensemble started at ``x0`` (scalar or array).

    ``bins`` are histogram edges or a :class:`Grid`; by default 64 bins spanning
    the snapshot range. ``sampler_bins`` is the position grid used by tabulated
    jump sampling.
    """
    if n_walkers < 1:
        raise ParameterDomainError("need at least one walker")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_walkers,))
    run = run_walkers(kernel, rate, WalkerEnsemble.start(x0, seed), t_end, snapshot_times,
                      bins=sampler_bins if sampler_bins is not None else (bins if isinstance(bins, Grid) else None),
                      workers=workers)
    out = []
    for m, t in enumerate(run.snapshot_times):
        pos = run.snapshot_positions[m]
        if bins is None:
            lo, hi = float(np.min(pos)), float(np.max(pos))
            pad = 1e-9 + 1e-9 * abs(hi)
            edges = np.linspace(lo - pad, hi + pad, 65)
        else:
            edges = _edges(bins)
        out.append(histogram(pos, run.snapshot_frozen[m], edges, float(t)))
    return out


def uniform_positions(n, a, b, seed):
    """``n`` positions uniform on ``[a, b]`` from the initialization stream."""
    return a + (b - a) * rng.uniform(seed, np.arange(n, dtype=np.uint64), 0, rng.STREAM_INIT)


def draw_jump_records(kernel, rate, positions, seed, bins=None) -> JumpRecords:
    """One jump from each position, with the departure-point waiting time."""
    positions = np.asarray(positions, dtype=float)
    sampler = JumpSampler(kernel, rate, bins)
    u = rng.uniform(seed, np.arange(positions.size, dtype=np.uint64), 0, rng.STREAM_JUMP)
    r = sampler.rate_at(positions)
    if np.any(r <= 0):
        raise ParameterDomainError("jump records need positive rates at every position")
    return JumpRecords(positions, sampler.sample(positions, u), 1.0 / r)


def estimate_km_from_trajectories(records: JumpRecords, bins, min_samples=100) -> EmpiricalProfile:
    """Per-bin ``V' = <delta/tau>`` and ``D = <delta^2/(2 tau)>`` with standard errors."""
    edges = _edges(bins)
    nb = edges.size - 1
    x, d, tau = (np.asarray(a, dtype=float) for a in records)
    counts = np.zeros(nb, dtype=int)
    drift = np.full(nb, np.nan)
    drift_se = np.full(nb, np.nan)
    diff = np.full(nb, np.nan)
    diff_se = np.full(nb, np.nan)
    if x.size:
        which = np.digitize(x, edges) - 1
        ok = (which >= 0) & (which < nb)
        which, v1, v2 = which[ok], (d / tau)[ok], (0.5 * d * d / tau)[ok]
        counts = np.bincount(which, minlength=nb)
        order = np.argsort(which, kind="stable")
        splits = np.cumsum(counts)[:-1]
        for b, (a1, a2) in enumerate(zip(np.split(v1[order], splits), np.split(v2[order], splits))):
            if a1.size == 0:
                continue
            drift[b], diff[b] = a1.mean(), a2.mean()
            if a1.size > 1:
                drift_se[b] = a1.std(ddof=1) / math.sqrt(a1.size)
                diff_se[b] = a2.std(ddof=1) / math.sqrt(a2.size)
    reported = counts >= min_samples
    for arr in (drift, drift_se, diff, diff_se):
        arr[~reported] = np.nan
    total = max(int(counts.sum()), 1)
    return EmpiricalProfile(edges, counts, counts / (total * np.diff(edges)), int(counts.sum()),
                            drift=drift, drift_se=drift_se, diffusivity=diff,
                            diffusivity_se=diff_se, reported=reported)


class PropagatorStats(NamedTuple):
    mean: float
    variance: float
    excess_kurtosis: float
    kurtosis_se: float
    ks_distance: float


def displacement_sums(kernel, n_steps, n_walkers, seed, workers=1):
    """Sum of ``n_steps`` independent jumps for each walker.

    Walker ``i`` uses draws ``(seed, i, k)``, so the result does not depend
    on ``workers``.
    """
    if not kernel.homogeneous:
        raise ParameterDomainError("propagator statistics need a position-independent kernel")

    def work(sl):
        idx = np.arange(sl.start, sl.stop, dtype=np.uint64)
        total = np.zeros(idx.size)
        for k in range(n_steps):
            total += kernel.ppf(rng.uniform(seed, idx, k, rng.STREAM_JUMP), 0.0)
        return total

    chunks = [slice(a, min(a + CHUNK, n_walkers)) for a in range(0, n_walkers, CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0)


def propagator_statistics(kernel, n_steps, n_walkers, seed, batches=20, workers=1) -> PropagatorStats:
    """Moments of the ``n_steps``-jump displacement and its KS distance to the fitted normal."""
    if n_steps < 1:
        raise DegenerateKernelError("zero steps: the propagator is a point mass at the origin")
    s = displacement_sums(kernel, n_steps, n_walkers, seed, workers)
    mean, var = float(s.mean()), float(s.var())
    kurt = float(stats.kurtosis(s, fisher=True, bias=True))
    parts = np.array_split(s, batches)
    kb = np.array([stats.kurtosis(p, fisher=True, bias=True) for p in parts])
    se = float(kb.std(ddof=1) / math.sqrt(batches))
    ks = float(stats.kstest(s, "norm", args=(mean, math.sqrt(var))).statistic)
    return PropagatorStats(mean, var, kurt, se, ks)


@dataclass
class TabulatedDensity:
    """Cell masses on a uniform jump grid ``delta_j = j * resolution``."""

    delta: np.ndarray
    mass: np.ndarray
    resolution: float

    @property
    def density(self):
        return self.mass / self.resolution

    def moment(self, k, about=0.0):
        return float(np.sum(self.mass * (self.delta - about) ** k) / np.sum(self.mass))

    @property
    def mean(self):
        return self.moment(1)

    @property
    def variance(self):
        return self.moment(2, self.mean)

    @property
    def excess_kurtosis(self):
        m = self.mean
        return self.moment(4, m) / self.moment(2, m) ** 2 - 3.0

    def ks_to_gaussian(self):
        """Largest gap between the tabulated CDF (at cell edges) and the moment-matched normal."""
        right = self.delta + 0.5 * self.resolution
        cdf = np.cumsum(self.mass) / np.sum(self.mass)
        ref = special.ndtr((right - self.mean) / math.sqrt(self.variance))
        return float(np.max(np.abs(cdf - ref)))


def n_fold_convolution(kernel: JumpKernel, n: int, resolution: float) -> TabulatedDensity:
    """Exact discrete ``n``-fold self-convolution of a homogeneous kernel.

    The single jump is represented by its mass in cells of width
    ``resolution`` centered on ``j * resolution``; the convolution power is
    taken with FFTs.
    """
    if not kernel.homogeneous:
        raise ParameterDomainError("convolution oracle needs a position-independent kernel")
    if n < 1:
        raise DegenerateKernelError("zero-fold convolution is a point mass at the origin")
    width = float(kernel.width(0.0))
    if resolution > width / 4 * (1 + 1e-12):
        raise ResolutionError(f"resolution {resolution:.4g} coarser than kernel width/4")
    lo, hi = kernel.support(np.asarray(0.0))
    j0 = math.floor(float(lo) / resolution - 0.5)
    j1 = math.ceil(float(hi) / resolution + 0.5)
    j = np.arange(j0, j1 + 1)
    d = j * resolution
    if hasattr(kernel, "cdf"):
        mass = np.diff(kernel.cdf(np.append(d - 0.5 * resolution, d[-1] + 0.5 * resolution), 0.0))
    else:
        mass = kernel.pdf(d, 0.0) * resolution
    mass = mass / mass.sum()
    size = n * (mass.size - 1) + 1
    nfft = int(2 ** math.ceil(math.log2(size)))
    out = np.fft.irfft(np.fft.rfft(mass, nfft) ** n, nfft)[:size]
    out = np.maximum(out, 0.0)
    delta = (n * j0 + np.arange(size)) * resolution
    return TabulatedDensity(delta, out / out.sum(), resolution)


def _write_csv(path, columns, rows, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in np.atleast_2d(rows):
            w.writerow([repr(float(v)) for v in row])
