import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from metransport import (
    ConvergenceError,
    GaussianKernel,
    Grid,
    LatticeField,
    ParameterDomainError,
    RateField,
    RateMatrix,
    StabilityError,
    SymmetricShape,
    TophatKernel,
    assemble_generator,
    build_detailed_balance_kernel,
    evolve,
    evolve_to_steady,
    interior_mass,
    interval_walls,
    slowest_decay_rate,
    slowest_mode,
    step_me,
)
from metransport.functions import Linear, Product, Sinusoidal
from metransport.master_equation import evolve_with_escape, max_stable_dt


@pytest.fixture
def gauss_gen(unit_grid):
    return assemble_generator(GaussianKernel(0.1), RateField(1.0), unit_grid)


def test_conservative_columns(gauss_gen, unit_grid):
    np.testing.assert_allclose(gauss_gen.column_sums(), 1.0, atol=1e-12)
    assert gauss_gen.W.min() >= 0


def test_open_columns_lose_mass_at_edges(unit_grid):
    gen = assemble_generator(GaussianKernel(0.1), RateField(1.0), unit_grid, "open")
    sums = gen.column_sums()
    assert sums[0] < 1 and sums[-1] < 1
    assert np.all(sums <= 1 + 1e-12)
    np.testing.assert_allclose(sums + gen.escape, 1.0, atol=1e-12)
    narrow = assemble_generator(GaussianKernel(0.05), RateField(1.0), unit_grid, "open")
    assert narrow.column_sums()[64] == pytest.approx(1.0, abs=1e-12)


def test_exterior_columns_frozen():
    grid = Grid(-0.5, 1.5, 256)
    rate = RateField(1.0, interval_walls(0.0, 1.0, 0.0, 0.0))
    gen = assemble_generator(GaussianKernel(0.05), rate, grid)
    outside = (grid.centers < 0) | (grid.centers > 1)
    cols = np.asarray(abs(gen.W).sum(axis=0)).ravel()
    assert np.all(cols[outside] == 0)
    assert np.all(gen.loss[outside] == 0)


def test_bandwidth(unit_grid):
    gen = assemble_generator(TophatKernel(0.05), RateField(1.0), unit_grid)
    coo = gen.W.tocoo()
    assert np.max(np.abs(coo.row - coo.col)) <= int(np.ceil(0.05 / unit_grid.h))


def test_closure_validation(unit_grid):
    with pytest.raises(ParameterDomainError):
        assemble_generator(GaussianKernel(0.1), RateField(1.0), unit_grid, "periodic")


def test_uniform_stationary_under_homogeneous_detailed_balance(unit_grid):
    k, r = build_detailed_balance_kernel(SymmetricShape.unit_rate("gaussian", 0.05), 1.0)
    gen = assemble_generator(k, r, unit_grid)
    u = LatticeField(unit_grid, np.ones(unit_grid.n))
    out = step_me(u, gen, max_stable_dt(gen))
    np.testing.assert_allclose(out.values, 1.0, atol=1e-12)


def test_step_conserves_mass(gauss_gen, unit_grid):
    rng = np.random.default_rng(0)
    u = LatticeField(unit_grid, rng.random(unit_grid.n))
    out = step_me(u, gauss_gen, 0.5)
    assert abs(out.mass() - u.mass()) <= 1e-12 * u.mass()
    assert out.t == 0.5


def test_step_rejects_large_dt(gauss_gen, unit_grid):
    u = LatticeField(unit_grid, np.ones(unit_grid.n))
    with pytest.raises(StabilityError):
        step_me(u, gauss_gen, 0.6)
    with pytest.raises(StabilityError):
        step_me(u, gauss_gen, 0.0)
    with pytest.raises(StabilityError):
        evolve(u, gauss_gen, 1.0, dt=1.0)


def test_point_mass_variance_growth():
    # 2 D t with D = sigma^2/2 = 0.00125, before the spread reaches the walls
    grid = Grid(0, 1, 256)
    gen = assemble_generator(GaussianKernel(0.05), RateField(1.0), grid)
    f = evolve(LatticeField.point_mass(grid, 0.5), gen, 1.0)
    w = f.values / f.values.sum()
    mean = np.sum(w * grid.centers)
    var = np.sum(w * (grid.centers - mean) ** 2)
    assert var == pytest.approx(0.0025, rel=0.02)


def test_flat_interior_steady_state():
    # detailed balance with a suppressed exterior relaxes to a flat interior
    grid = Grid.with_walls(0.0, 1.0, 0.0125, pad=0.6)
    walls = interval_walls(0.0, 1.0, 0.2, 1e-6)
    k, r = build_detailed_balance_kernel(SymmetricShape.unit_rate("gaussian", 0.05),
                                         Product(walls), grid=grid)
    gen = assemble_generator(k, r, grid)
    x = grid.centers
    bump = np.where((x > 0.25) & (x < 0.75), np.sin(4 * np.pi * (x - 0.25)), 0.0)
    u0 = LatticeField(grid, 1.0 + 0.5 * bump)
    res = evolve_to_steady(u0, gen, tol=1e-9, t_max=1e5)
    assert res.converged
    core = grid.cells_in(0.3, 0.7)
    v = res.field.values[core]
    assert np.max(np.abs(v / v.mean() - 1)) < 1e-6


def test_absorbing_drains_interior():
    grid = Grid(-0.3, 1.3, 128)
    rate = RateField(1.0, interval_walls(0.0, 1.0, 0.05, 0.0))
    gen = assemble_generator(GaussianKernel(0.05), rate, grid)
    u0 = LatticeField(grid, np.where((grid.centers > 0) & (grid.centers < 1), 1.0, 0.0))
    f = evolve(u0, gen, 3000.0)
    assert interior_mass(f, (0.05, 0.95)) < 1e-3 * interior_mass(u0, (0.05, 0.95))
    assert f.mass() == pytest.approx(u0.mass(), rel=1e-12)


def test_closed_grid_relaxes_to_uniform():
    grid = Grid(0, 1, 64)
    gen = assemble_generator(GaussianKernel(0.1), RateField(1.0), grid)
    u0 = LatticeField(grid, 1 + np.cos(np.pi * grid.centers))
    res = evolve_to_steady(u0, gen, tol=1e-11)
    assert res.converged
    np.testing.assert_allclose(res.field.values, u0.mass(), rtol=1e-9)
    assert res.field.mass() == pytest.approx(u0.mass(), rel=1e-10)


def test_steady_not_converged_flag(gauss_gen, unit_grid):
    u0 = LatticeField(unit_grid, 1 + np.cos(np.pi * unit_grid.centers))
    res = evolve_to_steady(u0, gauss_gen, tol=1e-12, t_max=1.0)
    assert not res.converged
    assert res.residual > 1e-12


def test_diagonal_generator_rate():
    grid = Grid(0, 1, 16)
    W = sp.csr_matrix((16, 16))
    gen = RateMatrix(grid, W, np.full(16, 2.0), np.zeros(16), "open")
    assert slowest_decay_rate(gen) == pytest.approx(2.0, rel=1e-12)


def absorbing_rate(sigma, n=1024):
    grid = Grid(-0.2, 1.2, n)
    rate = RateField(1.0, interval_walls(0.0, 1.0, sigma, 0.0))
    gen = assemble_generator(GaussianKernel(sigma), rate, grid)
    return slowest_mode(gen, grid.cells_in(0.0, 1.0))


def test_absorbing_slowest_rate():
    mode = absorbing_rate(0.02)
    analytic = 0.02 ** 2 / 2 * np.pi ** 2
    assert analytic == pytest.approx(1.974e-3, rel=1e-3)
    assert mode.rate == pytest.approx(analytic, rel=0.15)
    assert np.all(mode.vector >= 0)
    assert np.sum(mode.vector) * (1.4 / 1024) == pytest.approx(1.0)
    half = absorbing_rate(0.01)
    assert half.rate / mode.rate == pytest.approx(0.25, rel=0.10)


def test_slowest_mode_singular_block(gauss_gen):
    with pytest.raises(ConvergenceError):
        slowest_mode(gauss_gen)


def test_interior_mass_examples(unit_grid):
    x = unit_grid.centers
    assert interior_mass(LatticeField(unit_grid, np.ones(128)), (0, 1)) == pytest.approx(1.0)
    assert interior_mass(LatticeField(unit_grid, np.zeros(128)), (0, 1)) == 0.0
    half = LatticeField(unit_grid, np.where(x < 0.5, 2.0, 0.0))
    assert interior_mass(half, (0, 1)) == pytest.approx(1.0)


def test_escape_ledger():
    grid = Grid(0, 1, 64)
    gen = assemble_generator(GaussianKernel(0.1), RateField(1.0), grid, "open")
    u0 = LatticeField(grid, np.ones(64))
    f, escaped = evolve_with_escape(u0, gen, 5.0)
    assert escaped > 0
    assert f.mass() + escaped == pytest.approx(u0.mass(), rel=1e-13)
    f2 = evolve(u0, gen, 5.0)
    np.testing.assert_allclose(f.values, f2.values, rtol=1e-12)


def test_triplets(tmp_path, unit_grid):
    gen = assemble_generator(TophatKernel(0.05), RateField(1.0), unit_grid)
    path = tmp_path / "gen.txt"
    gen.to_triplets(path)
    data = np.loadtxt(path, comments="#")
    W = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=gen.W.shape)
    assert abs(W - gen.W).max() == 0


def steady_profile(n):
    grid = Grid(0, 1, n)
    gen = assemble_generator(GaussianKernel(Linear(0.03, 0.03)), RateField(1.0), grid)
    G = gen.generator.tolil()
    G[0, :] = grid.h
    rhs = np.zeros(n)
    rhs[0] = 1.0
    return spla.spsolve(G.tocsc(), rhs)


@pytest.mark.filterwarnings("ignore:grid spacing")
def test_steady_profile_grid_convergence():
    # coarse-grained to 64 cells, successive differences shrink by ~4 per halving
    profiles = [steady_profile(64 * 2 ** k).reshape(64, -1).mean(axis=1) for k in range(4)]
    d = [np.linalg.norm(profiles[k + 1] - profiles[k]) for k in range(3)]
    assert 3 <= d[0] / d[1] <= 5
    assert 3 <= d[1] / d[2] <= 5


@pytest.mark.filterwarnings("ignore:grid spacing")
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["gaussian", "tophat"]), st.floats(0.03, 0.15))
def test_conservation_and_positivity(seed, family, width):
    grid = Grid(0, 1, 64)
    kernel = GaussianKernel(width) if family == "gaussian" else TophatKernel(width)
    gen = assemble_generator(kernel, RateField(Linear(1.0, 1.0)), grid)
    u0 = LatticeField(grid, np.random.default_rng(seed).random(64) ** 3)
    f = evolve(u0, gen, 5.0)
    assert abs(f.mass() - u0.mass()) <= 1e-12 * u0.mass()
    assert f.values.min() >= -1e-14 * f.values.max()


@pytest.mark.filterwarnings("ignore:grid spacing")
@given(st.floats(0.02, 0.06), st.floats(0.0, 0.5))
def test_detailed_balance_uniform_stationary(width, amplitude):
    grid = Grid(0, 1, 100)
    k, r = build_detailed_balance_kernel(SymmetricShape.unit_rate("gaussian", width),
                                         Sinusoidal(1.0, amplitude), grid=grid)
    gen = assemble_generator(k, r, grid)
    drift = gen.generator @ np.ones(grid.n)
    assert np.max(np.abs(drift)) <= 1e-10


def test_frozen_exterior_accumulates():
    grid = Grid(-0.3, 1.3, 128)
    rate = RateField(1.0, interval_walls(0.0, 1.0, 0.05, 0.0))
    gen = assemble_generator(GaussianKernel(0.05), rate, grid)
    outside = gen.loss == 0
    snaps = []
    evolve(LatticeField(grid, np.where(outside, 0.0, 1.0)), gen, 20.0,
           record=lambda f: snaps.append(f.values[outside].copy()))
    assert np.all(np.diff(np.array(snaps), axis=0) >= -1e-15)
