"""Scenario pipelines: assemble, evolve, solve the matching PDE, compare.

Every pipeline writes its CSV artifacts and ``report.json`` into the output
directory. A stage that raises leaves the artifacts written so far, writes a
``FAILED.json`` marker naming the stage, and re-raises with the stage name
attached as ``exc.stage``.
"""
from __future__ import annotations

import contextlib
import copy
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .. import rng
from ..coefficients import (
    TransportProfile,
    derivative,
    detailed_balance_residual,
    km_moment,
    reduce_to_transport,
    truncation_diagnostic,
)
from ..errors import ConfigError
from ..functions import Product, as_function
from ..grid import Grid, LatticeField
from ..kernels import (
    DetailedBalanceKernel,
    RateField,
    build_detailed_balance_kernel,
    interval_walls,
    kernel_from_spec,
    mean_jump_length,
)
from ..master_equation import (
    assemble_generator,
    evolve,
    evolve_to_steady,
    evolve_with_escape,
    max_stable_dt,
    slowest_mode,
)
from ..pde import BoundaryCondition, PdeProblem, decay_rate, fit_decay, march, steady_state
from ..walkers import (
    WalkerEnsemble,
    draw_jump_records,
    estimate_km_from_trajectories,
    histogram,
    n_fold_convolution,
    propagator_statistics,
    run_walkers,
    save_checkpoint,
    uniform_positions,
)
from .artifacts import clear_failure, mark_failure, read_field_csv, write_field_csv, write_table
from .compare import ComparisonReport, boundary_layer_widths, compare_fields, versions
from .config import ExperimentConfig

WIDTH_KEYS = {"gaussian": "sigma", "shifted_gaussian": "sigma", "tophat": "a"}


# --------------------------------------------------------------------------- setup

def kernel_width_spec(spec: dict) -> float:
    """Nominal width parameter of a kernel spec (sigma, a or base width)."""
    family = spec["family"]
    if family == "detailed_balance":
        return float(spec["base"]["width"])
    if family == "tabulated":
        delta = np.asarray(spec["delta"], dtype=float)
        return float(delta.max() - delta.min()) / 4
    value = spec[WIDTH_KEYS[family]]
    if not isinstance(value, (int, float)):
        f = as_function(value)
        return float(np.min(f(np.linspace(0.0, 1.0, 201))))
    return float(value)


def with_width(spec: dict, width: float) -> dict:
    """Copy of a kernel spec with its width parameter replaced."""
    spec = copy.deepcopy(spec)
    family = spec["family"]
    if family == "detailed_balance":
        spec["base"]["width"] = width
    elif family in WIDTH_KEYS:
        key = WIDTH_KEYS[family]
        if not isinstance(spec[key], (int, float)):
            raise ConfigError("width sweeps need a constant width parameter", f"$.kernel.{key}")
        spec[key] = width
    else:
        raise ConfigError(f"family {family!r} has no width parameter to sweep", "$.kernel.family")
    return spec


@dataclass
class Setup:
    kernel: object
    rate: RateField
    grid: Grid
    width: float
    walls: tuple = ()
    interval: tuple | None = None
    wall_width: float = 0.0

    @property
    def interior_cells(self) -> slice:
        if self.interval is None:
            return slice(0, self.grid.n)
        return self.grid.cells_in(*self.interval)


def build_setup(cfg: ExperimentConfig, kernel_spec=None) -> Setup:
    doc = cfg.document
    kspec = doc["kernel"] if kernel_spec is None else kernel_spec
    width = kernel_width_spec(kspec)
    walls_cfg = doc.get("walls")
    grid_cfg = doc["grid"]
    walls, interval, eps = (), None, 0.0
    if walls_cfg is not None:
        interval = (float(walls_cfg["left"]), float(walls_cfg["right"]))
        eps = walls_cfg["width"]
        eps = walls_cfg.get("width_factor", 1.0) * width if eps is None else float(eps)
        walls = interval_walls(interval[0], interval[1], eps, float(walls_cfg["floor"]))

    kernel = kernel_from_spec(kspec)
    if "n" in grid_cfg:
        grid = Grid(float(grid_cfg["x_min"]), float(grid_cfg["x_max"]), int(grid_cfg["n"]))
    else:
        span = np.linspace(interval[0], interval[1], 201)
        reach = kernel.delta_max(span) if not kernel.homogeneous else kernel.delta_max()
        pad = grid_cfg.get("pad")
        pad = reach + 2.0 * eps if pad is None else float(pad)
        grid = Grid.with_walls(interval[0], interval[1], width / grid_cfg["cells_per_width"], pad)

    if isinstance(kernel, DetailedBalanceKernel):
        phi = Product((kernel.phi,) + walls) if walls else kernel.phi
        kernel, rate = build_detailed_balance_kernel(kernel.base, phi, kernel.reach, grid)
    else:
        rate = RateField(doc["rate"]["base"], walls)
    return Setup(kernel, rate, grid, width, walls, interval, eps)


def build_initial(cfg: ExperimentConfig, setup: Setup) -> LatticeField:
    spec = cfg.document.get("initial")
    grid = setup.grid
    if spec is None:
        return LatticeField(grid, np.ones(grid.n))
    if isinstance(spec, dict) and spec.get("form") == "point":
        return LatticeField.point_mass(grid, float(spec["x0"]))
    if isinstance(spec, dict) and spec.get("form") == "perturbed_uniform":
        # zero-mass sine on the core, away from the wall transitions
        a, b = setup.interval if setup.interval else (grid.x_min, grid.x_max)
        a, b = a + setup.wall_width, b - setup.wall_width
        x = grid.centers
        z = (x - a) / (b - a)
        bump = np.where((z > 0) & (z < 1), np.sin(2 * np.pi * z), 0.0)
        return LatticeField(grid, 1.0 + float(spec.get("amplitude", 0.5)) * bump)
    return LatticeField.from_function(grid, as_function(spec, "$.initial"))


def sample_from_field(field: LatticeField, n, seed) -> np.ndarray:
    """Positions distributed as the cell masses, uniform within each cell."""
    mass = np.clip(field.values, 0.0, None)
    if not mass.sum() > 0:
        raise ConfigError("initial field has no positive mass to sample walkers from", "$.initial")
    cdf = np.cumsum(mass)
    cdf /= cdf[-1]
    idx = np.arange(n, dtype=np.uint64)
    u1 = rng.uniform(seed, idx, 0, rng.STREAM_INIT)
    u2 = rng.uniform(seed, idx, 1, rng.STREAM_INIT)
    cell = np.minimum(np.searchsorted(cdf, u1, side="right"), field.grid.n - 1)
    return field.grid.edges[cell] + u2 * field.grid.h


# --------------------------------------------------------------------------- driver

class _Stages:
    def __init__(self, out_dir):
        self.out_dir = out_dir

    @contextlib.contextmanager
    def __call__(self, name):
        try:
            yield
        except Exception as exc:
            mark_failure(self.out_dir, name, exc)
            if getattr(exc, "stage", None) is None:
                try:
                    exc.stage = name
                except AttributeError:
                    pass
            raise


def _dt(cfg, gen):
    return cfg.run["dt_safety"] * max_stable_dt(gen)


def _provenance(cfg):
    return {"config_sha256": cfg.digest(), "seed": cfg.seed, "versions": versions()}


def _start(cfg, out_dir, name):
    out = os.fspath(out_dir if out_dir is not None else cfg.output_dir)
    os.makedirs(out, exist_ok=True)
    clear_failure(out)
    report = ComparisonReport(name, provenance=_provenance(cfg))
    with open(os.path.join(out, "config.resolved.json"), "w") as fh:
        fh.write(json.dumps(cfg.run_defining(), sort_keys=True, indent=2) + "\n")
    report.artifacts.append("config.resolved.json")
    return out, report, _Stages(out)


def _finish(out, report):
    report.artifacts.append("report.json")
    report.write(os.path.join(out, "report.json"))
    return report


def run_scenario(config: ExperimentConfig, out_dir=None) -> ComparisonReport:
    """Run the scenario named in ``config`` and write its artifacts.

    ``out_dir`` overrides the configured output directory.
    """
    runners = {
        "S1_reflecting_smooth": _run_s1,
        "S2_absorbing_smooth": _run_s2,
        "S3_sharp_interface": _run_s3,
        "S4_clt": _run_s4,
        "S5_coefficient_sweep": _run_s5,
        "custom": _run_custom,
    }
    out, report, stage = _start(config, out_dir, config.scenario)
    runners[config.scenario](config, out, report, stage)
    return _finish(out, report)


def _write(out, report, name, columns, data, header=()):
    write_table(os.path.join(out, name), columns, data, header)
    report.artifacts.append(name)


def _ledger(report, initial, field, cells, escaped=0.0):
    h = field.grid.h
    interior = float(np.sum(field.values[cells]) * h)
    report.mass_ledger = {
        "initial": float(initial),
        "interior": interior,
        "exterior": float(np.sum(field.values) * h) - interior,
        "escaped": float(escaped),
    }


# --------------------------------------------------------------------------- S1

def _s1_once(cfg, kspec, out, report, stage, suffix):
    run = cfg.run
    with stage("setup" + suffix):
        st = build_setup(cfg, kspec)
        gen = assemble_generator(st.kernel, st.rate, st.grid, "conservative")
    with stage("evolve_me" + suffix):
        u0 = build_initial(cfg, st)
        steady = evolve_to_steady(u0, gen, tol=run["tol"], t_max=run["t_max"], dt=_dt(cfg, gen))
    left, right = st.interval
    cells = st.interior_cells
    with stage("coefficients" + suffix):
        profile = reduce_to_transport(st.kernel, st.rate, st.grid)
        inner = profile.restrict(cells)
        sub = inner.grid
    with stage("solve_pde" + suffix):
        walls = BoundaryCondition.zero_flux("left"), BoundaryCondition.zero_flux("right")
        flat = LatticeField(sub, np.ones(sub.n))
        fick = steady_state(PdeProblem("fick", inner, *walls, flat), tol=run["tol"])
        fpe_profile = TransportProfile.from_fpe(sub, inner.D, 0.0)
        fpe = steady_state(PdeProblem("fpe", fpe_profile, *walls, flat), tol=run["tol"])
    with stage("compare" + suffix):
        me = steady.field.restrict(cells)
        core = (left + st.wall_width, right - st.wall_width)
        m = {"me_residual": steady.residual, "me_converged": steady.converged,
             "me_time": steady.field.t, "fick_converged": fick.converged,
             "fpe_converged": fpe.converged, "wall_width": st.wall_width,
             "kernel_width": st.width}
        for name, f in (("fick", fick.field), ("fpe", fpe.field)):
            for region, tag in ((None, "interior"), (core, "core")):
                for k, v in compare_fields(me, f, region, normalize=True).items():
                    m[f"{name}_{tag}_{k}"] = v
        m["fick_beats_fpe"] = m["fick_core_rel_l2"] < m["fpe_core_rel_l2"]
        widths = boundary_layer_widths(me, fick.field, run["threshold"])
        m["boundary_layer_width"] = max(widths)
        m["mean_jump_length"] = float(mean_jump_length(st.kernel, 0.5 * (left + right)))
        m["detailed_balance_residual"] = _db_residual(st)
        core_cells = sub.cells_in(*core)
        dDdx = derivative(inner.D, sub.h)[core_cells]
        gap = np.abs(inner.Vprime[core_cells] - dDdx)
        scale = np.max(np.abs(dDdx))
        m["drift_identity_ratio"] = float(gap.max() / scale) if scale > 0 else float(gap.max())
    with stage("write" + suffix):
        norm = lambda f: f.values / f.mass()  # noqa: E731
        _write(out, report, f"s1_fields{suffix}.csv", ["x", "me", "fick", "fpe"],
               [sub.centers, norm(me), norm(fick.field), norm(fpe.field)])
        _write(out, report, f"s1_profile{suffix}.csv", ["x", "D", "Vprime", "V"],
               [sub.centers, inner.D, inner.Vprime, inner.V])
    return m, (u0.mass(), steady.field, cells)


def _db_residual(st: Setup) -> float:
    """Largest pointwise relative detailed-balance defect over sampled pairs."""
    x = st.grid.centers[st.interior_cells][::4]
    reach = st.kernel.delta_max(x) if not st.kernel.homogeneous else st.kernel.delta_max()
    d = np.linspace(-reach, reach, 41)
    xx, dd = np.meshgrid(x, d, indexing="ij")
    forward = st.kernel.pdf(dd, xx) * st.rate(xx)
    res = detailed_balance_residual(st.kernel, st.rate, xx, dd)
    ok = forward > 1e-300
    return float(np.max(np.abs(res[ok]) / forward[ok])) if np.any(ok) else 0.0


def _run_s1(cfg, out, report, stage):
    kspec = cfg.document["kernel"]
    m, (m0, field, cells) = _s1_once(cfg, kspec, out, report, stage, "")
    report.update(m)
    _ledger(report, m0, field, cells)
    if cfg.run.get("refine"):
        fine = with_width(kspec, kernel_width_spec(kspec) / 2)
        mf, _ = _s1_once(cfg, fine, out, report, stage, "_refined")
        report.update({k: v for k, v in mf.items()}, prefix="refined_")
        report.add("refinement_ratio", m["fick_core_rel_l2"] / mf["fick_core_rel_l2"])


# --------------------------------------------------------------------------- S2 / S3

def _absorbing_core(cfg, kspec, stage, suffix):
    """Generator, slowest mode and the analytic Dirichlet reference."""
    with stage("setup" + suffix):
        st = build_setup(cfg, kspec)
        gen = assemble_generator(st.kernel, st.rate, st.grid, "conservative")
    with stage("slowest_mode" + suffix):
        mode = slowest_mode(gen, st.interior_cells, tol=cfg.run["tol"])
    left, right = st.interval
    L = right - left
    mid = 0.5 * (left + right)
    D = 0.5 * float(km_moment(st.kernel, st.rate, 2, mid))
    lam_fpe = D * math.pi ** 2 / L ** 2
    x_star = 0.5 * (math.pi * math.sqrt(D / mode.rate) - L)
    return st, gen, mode, D, lam_fpe, x_star


def _mode_field(st, mode):
    full = np.zeros(st.grid.n)
    full[mode.cells] = mode.vector
    cells = st.interior_cells
    return LatticeField(st.grid.subgrid(cells), full[cells]), cells


def _sine(grid, left, right):
    return LatticeField(grid, np.sin(np.pi * (grid.centers - left) / (right - left)))


def _run_s2(cfg, out, report, stage):
    kspec = cfg.document["kernel"]
    run = cfg.run
    st, gen, mode, D, lam_fpe, x_star = _absorbing_core(cfg, kspec, stage, "")
    left, right = st.interval
    L = right - left
    me_mode, cells = _mode_field(st, mode)
    sub = me_mode.grid
    m = {"me_rate": mode.rate, "fpe_rate_analytic": lam_fpe, "D": D,
         "rate_ratio": mode.rate / lam_fpe, "rate_rel_error": abs(mode.rate / lam_fpe - 1.0),
         "fick_neumann_rate": 0.0, "kernel_width": st.width, "wall_width": st.wall_width,
         "extrapolation_length": x_star, "extrapolation_length_over_width": x_star / st.width}
    t_end = run.get("t_end") or 3.0 / lam_fpe
    window = (t_end / 3.0, t_end)
    with stage("solve_pde"):
        inner = reduce_to_transport(st.kernel, st.rate, st.grid).restrict(cells)
        fpe_profile = TransportProfile.from_fpe(sub, inner.D, 0.0)
        zero = BoundaryCondition.dirichlet("left"), BoundaryCondition.dirichlet("right")
        problem = PdeProblem("fpe", fpe_profile, *zero, _sine(sub, left, right))
        m["fpe_rate_numeric"] = decay_rate(problem, window)
    with stage("evolve_me"):
        x = st.grid.centers
        u0 = LatticeField(st.grid, np.where((x > left) & (x < right),
                                            np.sin(np.pi * (x - left) / L), 0.0))
        times, masses = [], []

        def record(f):
            if f.t >= window[0] - 1e-9:
                times.append(f.t)
                masses.append(float(np.sum(f.values[cells]) * st.grid.h))

        final = evolve(u0, gen, t_end, dt=_dt(cfg, gen), record=record)
        m["me_rate_march"] = fit_decay(times, masses)
    with stage("compare"):
        m["fpe_beats_fick"] = abs(lam_fpe - mode.rate) < abs(0.0 - mode.rate)
        nominal = _sine(sub, left, right)
        fitted = _sine(sub, left - x_star, right + x_star)
        m["mode_rel_l2_nominal"] = compare_fields(me_mode, nominal, normalize=True)["rel_l2"]
        m["mode_rel_l2_fitted"] = compare_fields(me_mode, fitted, normalize=True)["rel_l2"]
        eps = st.wall_width
        m["fpe_rate_walls_out"] = D * math.pi ** 2 / (L + 2 * eps) ** 2
        m["fpe_rate_walls_in"] = D * math.pi ** 2 / (L - 2 * eps) ** 2 if L > 2 * eps else 0.0
        m["wall_placement_sensitivity"] = (m["fpe_rate_walls_in"] - m["fpe_rate_walls_out"]) / (2 * lam_fpe)
        m["boundary_layer_width"] = max(boundary_layer_widths(me_mode, fitted, run["threshold"]))
    report.update(m)
    _ledger(report, u0.mass(), final, cells)
    with stage("write"):
        _write(out, report, "s2_mode.csv", ["x", "me_mode", "sine_nominal", "sine_fitted"],
               [sub.centers, me_mode.values, nominal.values / nominal.mass(),
                fitted.values / fitted.mass()])
        _write(out, report, "s2_decay.csv", ["t", "me_interior_mass"], [times, masses])
    if run.get("refine"):
        fine = with_width(kspec, st.width / 2)
        _, _, mode_f, _, lam_f, _ = _absorbing_core(cfg, fine, stage, "_refined")
        report.add("refined_me_rate", mode_f.rate)
        report.add("refined_rate_ratio", mode_f.rate / lam_f)
        report.add("refined_rate_rel_error", abs(mode_f.rate / lam_f - 1.0))
        report.add("sigma_scaling", mode.rate / mode_f.rate / 4.0)


def _s3_once(cfg, kspec, stage, suffix):
    st, gen, mode, D, lam_fpe, x_star = _absorbing_core(cfg, kspec, stage, suffix)
    left, right = st.interval
    me_mode, _ = _mode_field(st, mode)
    with stage("compare" + suffix):
        pde = _sine(me_mode.grid, left - x_star, right + x_star)
        nominal = _sine(me_mode.grid, left, right)
        threshold = cfg.run["threshold"]
        wl, wr = boundary_layer_widths(me_mode, pde, threshold)
        mean_jump = float(mean_jump_length(st.kernel, 0.5 * (left + right)))
        m = {"me_rate": mode.rate, "fpe_rate_analytic": lam_fpe, "rate_ratio": mode.rate / lam_fpe,
             "extrapolation_length": x_star, "kernel_width": st.width, "wall_width": st.wall_width,
             "mean_jump_length": mean_jump, "layer_width_left": wl, "layer_width_right": wr,
             "boundary_layer_width": max(wl, wr),
             "layer_width_over_mean_jump": max(wl, wr) / mean_jump,
             "layer_confined": max(wl, wr) <= 4.0 * mean_jump,
             "boundary_layer_width_nominal_walls": max(boundary_layer_widths(me_mode, nominal, threshold)),
             "mode_rel_l2_fitted": compare_fields(me_mode, pde, normalize=True)["rel_l2"]}
    return m, me_mode, pde


def _run_s3(cfg, out, report, stage):
    kspec = cfg.document["kernel"]
    m, me_mode, pde = _s3_once(cfg, kspec, stage, "")
    report.update(m)
    with stage("write"):
        u = me_mode.values
        v = pde.values / pde.mass()
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.where(v > 0, np.abs(u - v) / v, 0.0)
        _write(out, report, "s3_mode.csv", ["x", "me_mode", "pde_mode", "local_discrepancy"],
               [me_mode.x, u, v, disc])
    if cfg.run.get("refine"):
        coarse = with_width(kspec, kernel_width_spec(kspec) * 2)
        mc, _, _ = _s3_once(cfg, coarse, stage, "_doubled")
        report.update(mc, prefix="doubled_")
        if m["boundary_layer_width"] > 0:
            report.add("width_doubling_ratio", mc["boundary_layer_width"] / m["boundary_layer_width"])


# --------------------------------------------------------------------------- S4

def _loglog_slope(n, k, weights=None):
    n = np.asarray(n, dtype=float)
    k = np.abs(np.asarray(k, dtype=float))
    return float(np.polyfit(np.log(n), np.log(k), 1, w=weights)[0])


def _run_s4(cfg, out, report, stage):
    run = cfg.run
    with stage("setup"):
        kernel = kernel_from_spec(cfg.document["kernel"])
        width = kernel_width_spec(cfg.document["kernel"])
        resolution = width / run["resolution_factor"]
    steps = sorted(set(run["steps"]))
    rows = []
    with stage("oracle"):
        single = n_fold_convolution(kernel, 1, resolution).excess_kurtosis
        oracle = {n: n_fold_convolution(kernel, n, resolution) for n in steps + [run["ks_steps"]]}
    with stage("walkers"):
        mc = {n: propagator_statistics(kernel, n, run["walkers"], cfg.seed, run["batches"],
                                       run["workers"])
              for n in steps + [run["ks_steps"]]}
    with stage("compare"):
        for n in steps:
            o, s = oracle[n], mc[n]
            rows.append([n, single / n, o.excess_kurtosis, s.excess_kurtosis, s.kurtosis_se,
                         o.ks_to_gaussian(), s.ks_distance])
        rows = np.array(rows)
        report.add("single_jump_kurtosis", single)
        report.add("kurtosis_exponent", _loglog_slope(rows[:, 0], rows[:, 2]))
        mc_k = rows[:, 3]
        if np.all(mc_k < 0):
            w = np.abs(mc_k) / rows[:, 4]
            report.add("kurtosis_exponent_mc", _loglog_slope(rows[:, 0], mc_k, w))
        z = np.abs(rows[:, 3] - rows[:, 2]) / rows[:, 4]
        report.add("mc_max_z", float(z.max()))
        report.add("oracle_max_abs_error", float(np.max(np.abs(rows[:, 2] - rows[:, 1]))))
        n_ks = run["ks_steps"]
        report.add("ks_steps", n_ks)
        report.add("ks_distance_oracle", oracle[n_ks].ks_to_gaussian())
        report.add("ks_distance_mc", mc[n_ks].ks_distance)
        report.add("walkers", run["walkers"])
    with stage("write"):
        _write(out, report, "s4_kurtosis.csv",
               ["n", "predicted", "oracle", "mc", "mc_se", "oracle_ks", "mc_ks"], list(rows.T))


# --------------------------------------------------------------------------- S5

def _closed_form(spec, rate0):
    """Analytic ``(D, V')`` for homogeneous closed-form families, else ``None``."""
    family = spec["family"]
    if family == "gaussian" and isinstance(spec["sigma"], (int, float)):
        return 0.5 * spec["sigma"] ** 2 * rate0, 0.0
    if family == "tophat" and isinstance(spec["a"], (int, float)):
        return spec["a"] ** 2 / 6.0 * rate0, 0.0
    if family == "shifted_gaussian" and isinstance(spec["sigma"], (int, float)) \
            and isinstance(spec.get("mu", 0.0), (int, float)):
        mu = float(spec.get("mu", 0.0))
        return 0.5 * (spec["sigma"] ** 2 + mu ** 2) * rate0, mu * rate0
    return None


def _run_s5(cfg, out, report, stage):
    run = cfg.run
    g = cfg.document["grid"]
    base_spec = cfg.document["kernel"]
    rows = []
    for i, w in enumerate(run["sweep"]):
        spec = with_width(base_spec, w)
        with stage(f"sweep[{i}]"):
            kernel = kernel_from_spec(spec)
            rate = RateField(cfg.document["rate"]["base"])
            n = max(int(g["n"]), math.ceil(4.0 * (g["x_max"] - g["x_min"]) / w))
            grid = Grid(float(g["x_min"]), float(g["x_max"]), n)
            profile = reduce_to_transport(kernel, rate, grid)
            bins = Grid(grid.x_min, grid.x_max, max(8, run["bins"]))
            seed = (cfg.seed + i) % 2 ** 64
            pos = uniform_positions(run["walkers"], grid.x_min, grid.x_max, seed)
            sampler_bins = None if hasattr(kernel, "ppf") else grid
            records = draw_jump_records(kernel, rate, pos, seed, sampler_bins)
            est = estimate_km_from_trajectories(records, bins)
            xb = bins.centers
            D_quad = np.interp(xb, grid.centers, profile.D)
            V_quad = np.interp(xb, grid.centers, profile.Vprime)
            ok = est.reported
            zD = np.abs(est.diffusivity[ok] - D_quad[ok]) / est.diffusivity_se[ok]
            zV = np.abs(est.drift[ok] - V_quad[ok]) / est.drift_se[ok]
            mid = 0.5 * (grid.x_min + grid.x_max)
            rho = truncation_diagnostic(kernel, rate, mid, run["L_u"])
            D_mid = float(np.interp(mid, grid.centers, profile.D))
            V_mid = float(np.interp(mid, grid.centers, profile.Vprime))
            exact = _closed_form(spec, float(rate(mid)))
            D_exact, V_exact = exact if exact is not None else (D_mid, V_mid)
            rows.append([w, D_mid, D_exact, float(np.mean(est.diffusivity[ok])),
                         V_mid, V_exact, float(np.mean(est.drift[ok])),
                         float(zD.max()), float(zV.max()), float(rho[3]), float(rho[4])])
    with stage("compare"):
        rows = np.array(rows)
        rel = np.abs(rows[:, 1] - rows[:, 2]) / np.abs(rows[:, 2])
        report.add("max_rel_error_D_quadrature", float(rel.max()))
        report.add("max_abs_error_Vprime_quadrature", float(np.max(np.abs(rows[:, 4] - rows[:, 5]))))
        report.add("max_z_D_walkers", float(rows[:, 7].max()))
        report.add("max_z_Vprime_walkers", float(rows[:, 8].max()))
        report.add("rho3", list(rows[:, 9]))
        report.add("rho4", list(rows[:, 10]))
        report.add("widths", list(rows[:, 0]))
    with stage("write"):
        _write(out, report, "s5_sweep.csv",
               ["width", "D_quadrature", "D_exact", "D_walkers", "Vprime_quadrature",
                "Vprime_exact", "Vprime_walkers", "z_D_max", "z_Vprime_max", "rho3", "rho4"],
               list(rows.T))


# --------------------------------------------------------------------------- custom / CLI stages

def run_coeffs(cfg, out, report, stage, st=None):
    if st is None:
        with stage("setup"):
            st = build_setup(cfg)
    with stage("coefficients"):
        profile = reduce_to_transport(st.kernel, st.rate, st.grid)
        profile.to_csv(os.path.join(out, "profile.csv"))
        report.artifacts.append("profile.csv")
        report.add("D_max", float(profile.D.max()))
        report.add("D_min", float(profile.D.min()))
        report.add("Vprime_max_abs", float(np.abs(profile.Vprime).max()))
    return st, profile


def _evolve_me(cfg, st, stage):
    run = cfg.run
    with stage("assemble"):
        gen = assemble_generator(st.kernel, st.rate, st.grid, run.get("closure", "conservative"))
    with stage("evolve_me"):
        u0 = build_initial(cfg, st)
        snaps = sorted(set(run.get("snapshot_times") or [run["t_end"]]) | {run["t_end"]})
        fields, escaped, f = [], 0.0, u0
        for t in snaps:
            f, esc = evolve_with_escape(f, gen, t, dt=_dt(cfg, gen))
            escaped += esc
            fields.append(f)
    return gen, u0, fields, escaped


def run_me(cfg, out, report, stage, st=None):
    if st is None:
        with stage("setup"):
            st = build_setup(cfg)
    gen, u0, fields, escaped = _evolve_me(cfg, st, stage)
    with stage("write_me"):
        for k, f in enumerate(fields):
            name = "me_field.csv" if k == len(fields) - 1 else f"me_field_{k}.csv"
            write_field_csv(os.path.join(out, name), f)
            report.artifacts.append(name)
        gen.to_triplets(os.path.join(out, "generator.txt"))
        report.artifacts.append("generator.txt")
    _ledger(report, u0.mass(), fields[-1], st.interior_cells, escaped)
    report.add("closure_open", gen.closure == "open")
    return st, u0, fields


def run_walk(cfg, out, report, stage, st=None, me_fields=None, record_jumps=True):
    run = cfg.run
    if st is None:
        with stage("setup"):
            st = build_setup(cfg)
    if not run.get("walkers"):
        raise ConfigError("walker runs need run.walkers > 0", "$.run.walkers")
    with stage("walkers"):
        u0 = build_initial(cfg, st)
        pos = sample_from_field(u0, run["walkers"], cfg.seed)
        snaps = sorted(set(run.get("snapshot_times") or [run["t_end"]]) | {run["t_end"]})
        sampler_bins = None if hasattr(st.kernel, "ppf") else st.grid
        result = run_walkers(st.kernel, st.rate, WalkerEnsemble.start(pos, cfg.seed), run["t_end"],
                             snaps, sampler_bins, record_jumps, run["workers"])
    with stage("write_walkers"):
        nb = run["bins"]
        edges = np.linspace(st.grid.x_min, st.grid.x_max, nb + 1)
        for k, t in enumerate(result.snapshot_times):
            hist = histogram(result.snapshot_positions[k], result.snapshot_frozen[k], edges, float(t))
            name = f"walkers_{k}.csv"
            hist.to_csv(os.path.join(out, name))
            report.artifacts.append(name)
            if me_fields is not None:
                _compare_walkers(report, hist, me_fields[k], u0.mass(), k)
        save_checkpoint(result.ensemble, os.path.join(out, "walkers.bin"))
        report.artifacts.append("walkers.bin")
        if record_jumps:
            result.jumps.to_csv(os.path.join(out, "jumps.csv"))
            report.artifacts.append("jumps.csv")
        report.add("walker_frozen_fraction", float(result.ensemble.frozen.mean()))
    return result


def binned_mass(field: LatticeField, nbins: int) -> np.ndarray:
    """ME mass per bin when the bins coarsen the grid by an integer factor."""
    if field.grid.n % nbins:
        raise ConfigError(f"bins ({nbins}) must divide the grid size ({field.grid.n})", "$.run.bins")
    return field.values.reshape(nbins, -1).sum(axis=1) * field.grid.h


def _compare_walkers(report, hist, field, m0, k):
    expected = hist.n_total * binned_mass(field, hist.counts.size) / m0
    observed = hist.counts + hist.frozen_counts
    ok = expected > 0
    z = np.abs(observed[ok] - expected[ok]) / np.sqrt(expected[ok])
    report.add(f"walker_max_z_{k}", float(z.max()))
    report.add(f"walker_fraction_beyond_4se_{k}", float(np.mean(z > 4)))


def build_pde_problem(cfg, st, initial: LatticeField) -> PdeProblem:
    spec = cfg.document.get("pde")
    if spec is None:
        raise ConfigError("this run needs a pde section", "$.pde")
    cells = st.interior_cells
    profile = reduce_to_transport(st.kernel, st.rate, st.grid).restrict(cells)
    sub = profile.grid
    form = spec.get("form", "fpe")
    if spec.get("drift", "profile") == "none":
        profile = TransportProfile.from_fpe(sub, profile.D, 0.0) if form == "fpe" \
            else TransportProfile.from_fick(sub, profile.D, 0.0)

    def bc(side):
        b = spec.get(side, {"kind": "neumann_flux", "value": 0.0})
        return BoundaryCondition(side, b["kind"], float(b.get("value", 0.0)),
                                 float(b.get("alpha", 0.0)), float(b.get("beta", 0.0)))

    return PdeProblem(form, profile, bc("left"), bc("right"), initial.restrict(cells))


def run_pde(cfg, out, report, stage, st=None):
    if st is None:
        with stage("setup"):
            st = build_setup(cfg)
    with stage("solve_pde"):
        u0 = build_initial(cfg, st)
        problem = build_pde_problem(cfg, st, u0)
        dt = cfg.run["dt_safety"] * problem.max_dt()
        f = march(problem, cfg.run["t_end"], dt=dt)
    with stage("write_pde"):
        write_field_csv(os.path.join(out, "pde_field.csv"), f)
        report.artifacts.append("pde_field.csv")
        report.add("pde_mass", f.mass())
        report.add("pde_initial_mass", problem.initial.mass())
    return f


def run_compare(cfg, out, report, stage):
    spec = cfg.document.get("compare")
    if spec is None:
        raise ConfigError("compare runs need a compare section with field files a and b", "$.compare")
    with stage("compare"):
        a = read_field_csv(spec["a"])
        b = read_field_csv(spec["b"])
        region = spec.get("region")
        report.update(compare_fields(a, b, region))
        report.update(compare_fields(a, b, region, normalize=True), prefix="normalized_")
        report.add("boundary_layer_width", max(boundary_layer_widths(a, b, cfg.run.get("threshold", 0.05))))


def _run_custom(cfg, out, report, stage):
    with stage("setup"):
        st = build_setup(cfg)
    run_coeffs(cfg, out, report, stage, st)
    _, _, fields = run_me(cfg, out, report, stage, st)
    if cfg.run.get("walkers"):
        run_walk(cfg, out, report, stage, st, me_fields=fields, record_jumps=False)
    f = run_pde(cfg, out, report, stage, st)
    with stage("compare"):
        me = fields[-1].restrict(st.interior_cells)
        report.update(compare_fields(f, me), prefix="pde_vs_me_")
        report.add("boundary_layer_width",
                   max(boundary_layer_widths(me, f, cfg.run.get("threshold", 0.05))))


def run_stage_command(command: str, cfg: ExperimentConfig, out_dir=None) -> ComparisonReport:
    """Entry point for the single-stage CLI commands."""
    out, report, stage = _start(cfg, out_dir, command)
    if command == "coeffs":
        run_coeffs(cfg, out, report, stage)
    elif command == "me-run":
        run_me(cfg, out, report, stage)
    elif command == "walk":
        run_walk(cfg, out, report, stage)
    elif command == "pde-run":
        run_pde(cfg, out, report, stage)
    elif command == "compare":
        run_compare(cfg, out, report, stage)
    else:
        raise ConfigError(f"unknown command {command!r}")
    return _finish(out, report)
