import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from metransport import (
    GaussianKernel,
    Grid,
    ParameterDomainError,
    RateField,
    ResolutionError,
    ShiftedGaussianKernel,
    SymmetricShape,
    TophatKernel,
    TransportProfile,
    UndefinedRatioError,
    build_detailed_balance_kernel,
    detailed_balance_residual,
    interval_walls,
    km_moment,
    reduce_to_transport,
    truncation_diagnostic,
)
from metransport.functions import Linear, Sinusoidal

TRUNC = math.erf(6 / math.sqrt(2))
# second moment of a normal truncated at six standard deviations, in units of sigma^2
TRUNC_VAR = 1 - 12 * stats.norm.pdf(6.0) / TRUNC


def test_km_moment_examples():
    g = GaussianKernel(0.1)
    assert km_moment(g, RateField(1.0), 2, 0.4) == pytest.approx(0.01 * TRUNC_VAR, rel=1e-8)
    assert km_moment(g, RateField(1.0), 2, 0.4) == pytest.approx(0.01, rel=1e-6)
    assert abs(km_moment(g, RateField(1.0), 1, 0.4)) < 1e-15
    k = ShiftedGaussianKernel(sigma=0.1, mu=0.02)
    assert km_moment(k, RateField(1.0), 1, 0.4) == pytest.approx(0.02, rel=1e-8)
    assert km_moment(TophatKernel(0.3), RateField(2.0), 2, 0.4) == pytest.approx(0.06, rel=1e-12)


def test_km_moment_frozen_site_and_order():
    r = RateField(1.0, interval_walls(0.0, 1.0, 0.0, 0.0))
    np.testing.assert_array_equal(km_moment(GaussianKernel(0.1), r, 2, np.array([-0.5, 1.5])), [0, 0])
    with pytest.raises(ParameterDomainError):
        km_moment(GaussianKernel(0.1), r, 0, 0.5)


def test_reduce_gaussian():
    grid = Grid(0, 1, 64)
    p = reduce_to_transport(GaussianKernel(0.1), RateField(1.0), grid)
    np.testing.assert_allclose(p.D, 0.005, rtol=1e-6)
    np.testing.assert_allclose(p.Vprime, 0.0, atol=1e-15)
    np.testing.assert_allclose(p.V, 0.0, atol=1e-12)


def test_reduce_homogeneous_detailed_balance():
    grid = Grid(0, 1, 100)
    k, r = build_detailed_balance_kernel(SymmetricShape.unit_rate("gaussian", 0.05), 1.0, grid=grid)
    p = reduce_to_transport(k, r, grid)
    np.testing.assert_allclose(p.Vprime, 0.0, atol=1e-15)
    np.testing.assert_allclose(p.dDdx, 0.0, atol=1e-12)
    np.testing.assert_allclose(p.D, 0.05 ** 2 / 2 * TRUNC_VAR, rtol=1e-8)


def fick_mismatch_oracle(width, amplitude=0.5):
    """Closed form of sup|V' - dD/dx| / sup|dD/dx| for phi = 1 + A sin(2 pi x).

    For an untruncated unit-rate Gaussian base of width w and k = 2 pi,
    V' = A cos(kx) (k/2) w^2 e^{-k^2 w^2/8} and dD/dx = (A k/4) cos(kx)
    (w^2 - k^2 w^4/4) e^{-k^2 w^2/8}, so the ratio is q/(1 - q), q = k^2 w^2/4.
    """
    q = (2 * math.pi * width) ** 2 / 4
    return q / (1 - q)


def db_mismatch(width, n=800):
    grid = Grid(0, 1, n)
    k, r = build_detailed_balance_kernel(SymmetricShape.unit_rate("gaussian", width),
                                         Sinusoidal(1.0, 0.5), grid=grid)
    p = reduce_to_transport(k, r, grid)
    return np.max(np.abs(p.Vprime - p.dDdx)) / np.max(np.abs(p.dDdx))


def test_detailed_balance_fick_consistency():
    e1, e2 = db_mismatch(0.05), db_mismatch(0.025)
    assert e1 <= 0.05
    assert e1 == pytest.approx(fick_mismatch_oracle(0.05), rel=0.01)
    assert e2 == pytest.approx(fick_mismatch_oracle(0.025), rel=0.01)
    assert 3 <= e1 / e2 <= 5


def test_residual_nonzero_for_position_dependent_width():
    k = GaussianKernel(Linear(0.05, 0.05))
    r = RateField(1.0)
    res = detailed_balance_residual(k, r, 0.5, 0.05)
    # p(0.05; 0.5) with sigma 0.075 minus p(-0.05; 0.55) with sigma 0.0775
    oracle = (stats.norm.pdf(0.05, scale=0.075) - stats.norm.pdf(-0.05, scale=0.0775)) / TRUNC
    assert oracle > 0
    assert res == pytest.approx(oracle, rel=1e-12)


def test_residual_zero_for_homogeneous_symmetric():
    x, d = np.meshgrid(np.linspace(0, 1, 9), np.linspace(-0.3, 0.3, 9))
    np.testing.assert_array_equal(detailed_balance_residual(GaussianKernel(0.1), RateField(2.0), x, d), 0.0)


def test_truncation_diagnostic_examples():
    rho = truncation_diagnostic(GaussianKernel(0.05), RateField(1.0), 0.5, 0.25)
    assert abs(rho[3]) < 1e-14
    a, L = 0.1, 0.25
    rho4 = truncation_diagnostic(TophatKernel(a), RateField(1.0), 0.5, L)[4]
    m4 = integrate.quad(lambda d: d ** 4 / (2 * a), -a, a)[0]
    m2 = integrate.quad(lambda d: d ** 2 / (2 * a), -a, a)[0]
    oracle = (m4 / 24) / (m2 / 2 * L ** 2)
    assert oracle == pytest.approx(a ** 2 / (20 * L ** 2), rel=1e-12)
    assert rho4 == pytest.approx(oracle, rel=1e-9)
    half = truncation_diagnostic(TophatKernel(a / 2), RateField(1.0), 0.5, L)[4]
    assert rho4 / half == pytest.approx(4.0, rel=1e-12)
    double_L = truncation_diagnostic(TophatKernel(a), RateField(1.0), 0.5, 2 * L)[4]
    assert rho4 / double_L == pytest.approx(4.0, rel=1e-14)
    with pytest.raises(UndefinedRatioError):
        truncation_diagnostic(TophatKernel(a), RateField(0.0), 0.5, L)
    with pytest.raises(ParameterDomainError):
        truncation_diagnostic(TophatKernel(a), RateField(1.0), 0.5, 0.0)


def test_transport_profile_enforces_relation(unit_grid):
    x = unit_grid.centers
    p = TransportProfile.from_fick(unit_grid, 0.01 * (1 + x), 0.0)
    np.testing.assert_allclose(p.Vprime, 0.01, rtol=1e-10)
    with pytest.raises(ParameterDomainError):
        TransportProfile(unit_grid, 0.01 * (1 + x), np.zeros_like(x), np.zeros_like(x))
    with pytest.raises(ParameterDomainError):
        TransportProfile.from_fpe(unit_grid, -np.ones_like(x), 0.0)


def test_profile_csv(tmp_path, unit_grid):
    p = reduce_to_transport(GaussianKernel(0.05), RateField(1.0), unit_grid)
    path = tmp_path / "profile.csv"
    p.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,D,Vprime,V"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], p.D)


def test_resolution_contract():
    with pytest.warns(UserWarning):
        reduce_to_transport(GaussianKernel(0.05), RateField(1.0), Grid(0, 1, 32))
    with pytest.raises(ResolutionError):
        reduce_to_transport(GaussianKernel(0.05), RateField(1.0), Grid(0, 1, 16))


@given(st.floats(0.02, 0.05), st.floats(0.0, 0.5), st.floats(0.2, 3.0))
def test_symmetric_kernels_have_no_drift(sigma, slope, rate):
    grid = Grid(0, 1, 200)
    for k in (GaussianKernel(sigma), TophatKernel(Linear(sigma, slope * sigma))):
        p = reduce_to_transport(k, RateField(rate), grid)
        assert np.max(np.abs(p.Vprime)) <= 1e-10 * np.max(p.D) / sigma
        assert np.all(p.D >= 0)


@given(st.floats(0.02, 0.05), st.floats(0.0, 0.9), st.floats(0.0, 0.02))
def test_diffusivity_nonnegative(width, amplitude, mu):
    grid = Grid(0, 1, 200)
    k, r = build_detailed_balance_kernel(SymmetricShape("gaussian", width), Sinusoidal(1.0, amplitude))
    assert np.all(reduce_to_transport(k, r, grid).D >= 0)
    k = ShiftedGaussianKernel(sigma=width, mu=mu)
    assert np.all(reduce_to_transport(k, RateField(Linear(1.0, 1.0)), grid).D >= 0)
