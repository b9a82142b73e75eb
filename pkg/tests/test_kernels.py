import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import truncnorm

from fredholm_kit.errors import DomainError, GridError
from fredholm_kit.fpt import BoundarySpec
from fredholm_kit.grid import Grid1D
from fredholm_kit.kernels import (Difference, ExponentialRate, KernelMatrix, NormalLocation,
                                  NormalScale, Reflected, Tabulated, TruncatedNormalFPT,
                                  build_matrix, column_mass, evaluate, kernel_from_dict,
                                  load_tabulated_csv, save_tabulated_csv)


def test_exponential_at_origin():
    assert evaluate(ExponentialRate(), 0.0, 2.0) == 2.0


def test_exponential_rejects_negative_rate():
    with pytest.raises(DomainError, match="theta=-1"):
        evaluate(ExponentialRate(), 1.0, -1.0)


def test_normal_location_mode_height():
    assert evaluate(NormalLocation(0.05), 0.3, 0.3) == pytest.approx(1 / (0.05 * math.sqrt(2 * math.pi)))
    assert 1 / (0.05 * math.sqrt(2 * math.pi)) == pytest.approx(7.9788, abs=1e-4)


def test_normal_scale_is_centred_with_variance_theta():
    k = NormalScale()
    assert evaluate(k, 0.0, 4.0) == pytest.approx(1 / (2 * math.sqrt(2 * math.pi)))
    assert evaluate(k, 1.0, 4.0) == pytest.approx(evaluate(k, -1.0, 4.0))
    with pytest.raises(DomainError):
        evaluate(k, 0.0, 0.0)


def test_difference_kernel_is_zero_at_origin():
    k = Difference(NormalLocation(0.05), Reflected(NormalLocation(0.05)))
    assert evaluate(k, 0.0, 0.0) == 0.0
    assert not k.density_in_x and not k.non_negative


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_difference_equals_plus_minus_minus(x, theta):
    plus, minus = NormalLocation(0.05), Reflected(NormalLocation(0.05))
    k = Difference(plus, minus)
    assert evaluate(k, x, theta) == evaluate(plus, x, theta) - evaluate(minus, x, theta)


def test_reflected_location_is_phi_of_x_plus_theta():
    k = Reflected(NormalLocation(0.1))
    assert evaluate(k, 0.2, 0.3) == pytest.approx(evaluate(NormalLocation(0.1), -0.2, 0.3))
    assert evaluate(k, 0.2, 0.3) == pytest.approx(evaluate(NormalLocation(0.1), 0.5, 0.0))


def test_domain_error_reports_index():
    k = Tabulated([0.0, 1.0], [0.0, 1.0], np.ones((2, 2)))
    with pytest.raises(DomainError, match=r"index \(2, 0\)"):
        build_matrix(k, Grid1D([0.0, 0.5, 2.0]), Grid1D([0.0, 1.0]))


def test_single_entry_matrix():
    x, t = Grid1D([0.5, 0.6]), Grid1D([1.0, 1.1])
    km = build_matrix(ExponentialRate(), x, t)
    assert km.entries[0, 0] == evaluate(ExponentialRate(), 0.5, 1.0)


def test_exponential_column_mass():
    km = build_matrix(ExponentialRate(), Grid1D.uniform(0, 20, 2001), Grid1D([1.0, 2.0]))
    assert column_mass(km, 0) == pytest.approx(1.0, abs=1e-5)


def test_normal_location_matrix_is_symmetric():
    g = Grid1D.uniform(0, 1, 201)
    km = build_matrix(NormalLocation(0.05), g, g)
    np.testing.assert_array_equal(km.entries, km.entries.T)


def test_column_mass_interior_and_edge():
    x = Grid1D.uniform(0, 1, 2001)
    km = build_matrix(NormalLocation(0.05), x, Grid1D([0.0, 0.5]))
    assert column_mass(km, 1) == pytest.approx(1.0, abs=1e-6)
    assert column_mass(km, 0) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("kernel,xg,tg", [
    (NormalLocation(0.05), Grid1D.uniform(-1, 2, 1201), Grid1D.uniform(0, 1, 21)),
    (NormalScale(), Grid1D.uniform(-30, 30, 6001), Grid1D.uniform(0.1, 20, 30)),
])
def test_density_columns_have_mass_at_most_one(kernel, xg, tg):
    masses = build_matrix(kernel, xg, tg).column_masses()
    assert np.all(masses >= 0) and np.all(masses <= 1 + 1e-9)


@pytest.mark.parametrize("theta", [0.5, 1.0, 4.0, 10.0])
def test_exponential_trapezoid_mass_matches_geometric_sum(theta):
    # trapezoid sum of theta*exp(-theta*x) on a uniform grid is a geometric series
    n, upper = 3001, 30.0
    h = upper / (n - 1)
    q = math.exp(-theta * h)
    exact = theta * h * ((1 - q**n) / (1 - q) - 0.5 * (1 + q ** (n - 1)))
    km = build_matrix(ExponentialRate(), Grid1D.uniform(0, upper, n), Grid1D([theta, theta + 1]))
    assert column_mass(km, 0) == pytest.approx(exact, rel=1e-12)


def test_truncation_warning():
    km = build_matrix(NormalLocation(0.05), Grid1D.uniform(0, 1, 201), Grid1D.uniform(0, 1, 11))
    warns = km.mass_warnings()
    assert len(warns) == 1 and "4 kernel column(s)" in warns[0]
    km = build_matrix(NormalLocation(0.05), Grid1D.uniform(-1, 2, 601), Grid1D.uniform(0, 1, 11))
    assert km.mass_warnings() == []


def test_matrix_validates_shape_and_sign():
    g = Grid1D.uniform(0, 1, 3)
    with pytest.raises(GridError):
        KernelMatrix(g, g, np.ones((3, 2)))
    with pytest.raises(GridError):
        KernelMatrix(g, g, -np.ones((3, 3)), non_negative=True)
    assert not KernelMatrix(g, g, -np.ones((3, 3))).non_negative


# -- truncated normal kernel for first passage times -------------------------------

@pytest.fixture
def sqrt_boundary():
    return BoundarySpec(1.0, 0.1, "sqrt")


def test_fpt_column_mass_is_one(sqrt_boundary):
    k = TruncatedNormalFPT(sqrt_boundary)
    theta = 1.0
    mu = float(k.mean(theta))
    x = Grid1D.uniform(0, mu + 10 / math.sqrt(theta), 20001)
    km = build_matrix(k, x, Grid1D([theta, 2 * theta]))
    assert column_mass(km, 0) == pytest.approx(1.0, abs=1e-6)


def test_fpt_columns_have_unit_mass_over_wide_grid(sqrt_boundary):
    k = TruncatedNormalFPT(sqrt_boundary)
    tg = Grid1D.uniform(0.05, 50, 100)
    km = build_matrix(k, Grid1D.uniform(0, 50, 50001), tg)
    np.testing.assert_allclose(km.column_masses(), 1.0, atol=1e-4)


def test_fpt_small_slope_is_half_normal():
    k = TruncatedNormalFPT(BoundarySpec(1.0, 1e-12, "sqrt"))
    x, theta = np.linspace(0, 3, 7), 2.0
    half_normal = 2 * math.sqrt(theta) * np.exp(-0.5 * x * x * theta) / math.sqrt(2 * math.pi)
    np.testing.assert_allclose(k(x, theta), half_normal, rtol=1e-9)


def test_fpt_mean_for_large_theta(sqrt_boundary):
    k = TruncatedNormalFPT(sqrt_boundary)
    theta = 25.0
    mu, sd = float(k.mean(theta)), 1 / math.sqrt(theta)
    x = Grid1D.uniform(0, mu + 12 * sd, 40001)
    km = build_matrix(k, x, Grid1D([theta, 26.0]))
    mean = float(x.weights @ (x.nodes * km.entries[:, 0]))
    alpha = mu / sd
    expected = mu + math.exp(-0.5 * alpha**2) / math.sqrt(2 * math.pi) / (0.5 * math.erfc(-alpha / math.sqrt(2))) * sd
    assert mean == pytest.approx(expected, rel=1e-6)
    assert mean == pytest.approx(truncnorm.mean(-alpha, np.inf, loc=mu, scale=sd), rel=1e-6)


def test_fpt_kernel_rejects_nonpositive_theta(sqrt_boundary):
    with pytest.raises(DomainError):
        TruncatedNormalFPT(sqrt_boundary)(1.0, 0.0)


def test_fpt_zero_for_negative_x(sqrt_boundary):
    assert TruncatedNormalFPT(sqrt_boundary)(-0.1, 1.0) == 0.0


# -- tabulated kernels --------------------------------------------------------------

def test_tabulated_reproduces_nodes_and_interpolates_bilinearly():
    x, t = np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0])
    table = np.add.outer(2 * x, 3 * t)  # bilinear function, interpolation is exact
    k = Tabulated(x, t, table)
    assert k(1.0, 1.0) == 5.0
    assert k(0.5, 0.25) == pytest.approx(1.75)
    with pytest.raises(DomainError):
        k(3.0, 0.5)


def test_tabulated_csv_round_trip(tmp_path):
    km = build_matrix(NormalLocation(0.2), Grid1D.uniform(-1, 2, 31), Grid1D.uniform(0, 1, 11))
    path = tmp_path / "k.csv"
    save_tabulated_csv(km, path)
    k = load_tabulated_csv(path)
    np.testing.assert_array_equal(k.matrix().entries, km.entries)
    np.testing.assert_array_equal(k.x_grid.nodes, km.x_grid.nodes)
    back = kernel_from_dict({"kind": "tabulated", "path": str(path)})
    assert back(0.5, 0.5) == pytest.approx(km.kernel(0.5, 0.5))


def test_tabulated_csv_errors(tmp_path):
    path = tmp_path / "k.csv"
    path.write_text("corner,0,1\n0,1,2\n1,3\n")
    with pytest.raises(GridError, match="k.csv:3"):
        load_tabulated_csv(path)
    path.write_text("corner,0,1\n0,1,x\n1,3,4\n")
    with pytest.raises(GridError, match="k.csv:2"):
        load_tabulated_csv(path)


def test_kernel_dict_round_trip():
    k = Difference(NormalLocation(0.05), Reflected(NormalLocation(0.05)))
    back = kernel_from_dict(k.to_dict())
    assert back(0.3, 0.2) == k(0.3, 0.2)
    with pytest.raises(GridError):
        kernel_from_dict({"kind": "nope"})


@given(st.floats(0.01, 5), st.floats(-3, 3))
def test_sampling_matches_kernel_family(sigma, theta):
    rng = np.random.default_rng(0)
    draws = NormalLocation(sigma).sample(np.full(4000, theta), rng)
    assert abs(draws.mean() - theta) < 5 * sigma / math.sqrt(4000)
