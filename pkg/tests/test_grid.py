import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import beta as beta_fn
from scipy.stats import beta

from fredholm_kit.errors import GridError, SupportError, ZeroMassError
from fredholm_kit.grid import (Grid1D, GridFunction, kl_divergence, l1_distance,
                               normalize_to_density, read_csv, trapezoid_integrate, write_csv)


def sorted_nodes(min_size=2, max_size=40):
    gaps = st.lists(st.floats(1e-3, 10.0), min_size=min_size - 1, max_size=max_size - 1)
    return st.builds(lambda start, g: start + np.concatenate([[0.0], np.cumsum(g)]),
                     st.floats(-50, 50), gaps)


def density_on(grid, raw):
    return normalize_to_density(GridFunction(grid, np.asarray(raw) + 1e-3))


# -- Grid1D ------------------------------------------------------------------

def test_weights_interior_and_ends():
    g = Grid1D([0.0, 1.0, 3.0, 6.0])
    np.testing.assert_allclose(g.weights, [0.5, 1.5, 2.5, 1.5])


@given(sorted_nodes())
def test_weights_sum_to_length(nodes):
    g = Grid1D(nodes)
    assert np.all(g.weights > 0)
    span = nodes[-1] - nodes[0]
    assert abs(g.weights.sum() - span) <= 1e-12 * max(1.0, abs(span))


@pytest.mark.parametrize("nodes", [[0.0], [0.0, 0.0], [1.0, 0.0], [0.0, np.nan], [0.0, np.inf]])
def test_invalid_nodes_rejected(nodes):
    with pytest.raises(GridError):
        Grid1D(nodes)


def test_uniform_requires_min_below_max():
    with pytest.raises(GridError, match="below"):
        Grid1D.uniform(1.0, 1.0, 5)


def test_grids_are_read_only():
    g = Grid1D.uniform(0, 1, 5)
    with pytest.raises(ValueError):
        g.nodes[0] = 3.0
    fn = GridFunction(g, np.ones(5))
    with pytest.raises(ValueError):
        fn.values[0] = 3.0


def test_value_length_must_match():
    with pytest.raises(GridError):
        GridFunction(Grid1D.uniform(0, 1, 5), np.ones(4))


def test_concat_keeps_block_weights_and_splits_back():
    a, b = Grid1D.uniform(0, 1, 3), Grid1D.uniform(1, 2, 5)
    g = Grid1D.concat(a, b)
    assert len(g) == 8 and g.blocks == (3, 5)
    np.testing.assert_array_equal(g.weights, np.concatenate([a.weights, b.weights]))
    # a step function with a jump at the repeated node is integrated exactly
    step = GridFunction(g, np.r_[np.ones(3), 3 * np.ones(5)])
    assert trapezoid_integrate(step) == pytest.approx(4.0, abs=1e-14)
    assert g.split() == [a, b]
    with pytest.raises(GridError):
        Grid1D.concat(b, a)


# -- trapezoid_integrate -----------------------------------------------------

def test_integrate_constant():
    assert trapezoid_integrate(Grid1D.uniform(0, 1, 11).tabulate(np.ones_like)) == pytest.approx(1.0)


@given(sorted_nodes(), st.floats(-5, 5), st.floats(-5, 5))
def test_integrate_exact_for_linear(nodes, slope, icept):
    g = Grid1D(nodes)
    got = trapezoid_integrate(g.tabulate(lambda x: slope * x + icept))
    a, b = nodes[0], nodes[-1]
    exact = 0.5 * slope * (b * b - a * a) + icept * (b - a)
    assert got == pytest.approx(exact, rel=1e-12, abs=1e-9)


def test_integrate_exponential():
    g = Grid1D.uniform(0, 5, 501)
    got = trapezoid_integrate(g.tabulate(lambda x: np.exp(-x)))
    assert got == pytest.approx(1 - math.exp(-5), abs=1e-4)


# -- kl_divergence -------------------------------------------------------------

def test_kl_self_is_zero():
    g = Grid1D.uniform(0, 1, 101)
    f = normalize_to_density(g.tabulate(lambda x: 1 + x))
    assert kl_divergence(f, f) == 0.0


def test_kl_two_gaussians():
    g = Grid1D.uniform(-8, 8, 1601)
    f = g.tabulate(lambda x: np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))
    h = g.tabulate(lambda x: np.exp(-0.5 * (x - 0.5) ** 2) / math.sqrt(2 * math.pi))
    assert kl_divergence(f, h) == pytest.approx(0.125, abs=1e-3)


def test_kl_support_violation():
    g = Grid1D.uniform(0, 1, 3)
    with pytest.raises(SupportError, match="node 1"):
        kl_divergence(GridFunction(g, [1.0, 1.0, 1.0]), GridFunction(g, [1.0, 0.0, 1.0]))


def test_kl_zero_log_zero():
    g = Grid1D.uniform(0, 1, 3)
    f = GridFunction(g, [0.0, 2.0, 0.0])
    h = GridFunction(g, [0.0, 1.0, 1.0])
    assert kl_divergence(f, h) == pytest.approx(0.5 * 2 * math.log(2))


def test_kl_grid_mismatch():
    with pytest.raises(GridError):
        kl_divergence(Grid1D.uniform(0, 1, 3).tabulate(np.ones_like),
                      Grid1D.uniform(0, 1, 4).tabulate(np.ones_like))


@settings(max_examples=50)
@given(st.integers(2, 30).flatmap(lambda n: st.tuples(
    sorted_nodes(n, n), st.lists(st.floats(0, 10), min_size=n, max_size=n),
    st.lists(st.floats(0, 10), min_size=n, max_size=n))))
def test_gibbs_inequality(args):
    nodes, a, b = args
    g = Grid1D(nodes)
    f, h = density_on(g, a), density_on(g, b)
    assert kl_divergence(f, h) >= -1e-10


# -- l1_distance ---------------------------------------------------------------

def test_l1_simple_cases():
    g = Grid1D.uniform(0, 1, 11)
    one, zero = g.tabulate(np.ones_like), g.tabulate(np.zeros_like)
    assert l1_distance(one, one) == 0.0
    assert l1_distance(one, zero) == pytest.approx(1.0)


def test_l1_two_betas_against_riemann_sum():
    g = Grid1D.uniform(0, 1, 1001)
    f, h = g.tabulate(lambda t: beta.pdf(t, 2, 5)), g.tabulate(lambda t: beta.pdf(t, 4, 1))
    d = np.abs(f.values - h.values)
    dx = 1.0 / 1000
    brute = sum(dx * (d[i] + d[i + 1]) / 2 for i in range(1000))
    assert l1_distance(f, h) == pytest.approx(brute, abs=1e-6)


@settings(max_examples=50)
@given(st.integers(2, 20).flatmap(lambda n: st.tuples(
    sorted_nodes(n, n), *[st.lists(st.floats(-5, 5), min_size=n, max_size=n)] * 3)))
def test_l1_is_a_metric(args):
    nodes, a, b, c = args
    g = Grid1D(nodes)
    fa, fb, fc = (GridFunction(g, v) for v in (a, b, c))
    assert l1_distance(fa, fb) == l1_distance(fb, fa)
    assert l1_distance(fa, fc) <= l1_distance(fa, fb) + l1_distance(fb, fc) + 1e-12


# -- normalize_to_density ------------------------------------------------------

def test_normalize_constant():
    g = Grid1D.uniform(0, 1, 11)
    np.testing.assert_allclose(normalize_to_density(g.tabulate(lambda x: 2 * np.ones_like(x))).values, 1.0)


def test_normalize_beta_kernel():
    g = Grid1D.uniform(0, 1, 1001)
    got = normalize_to_density(g.tabulate(lambda t: t**4 * (1 - t) ** 4))
    exact = g.nodes**4 * (1 - g.nodes) ** 4 / beta_fn(5, 5)
    assert np.max(np.abs(got.values - exact)) < 1e-4


@given(sorted_nodes(), st.data())
def test_normalize_gives_unit_mass(nodes, data):
    g = Grid1D(nodes)
    vals = data.draw(st.lists(st.floats(0, 100), min_size=len(nodes), max_size=len(nodes)))
    fn = GridFunction(g, np.asarray(vals) + 1e-6)
    assert abs(normalize_to_density(fn).mass() - 1.0) <= 1e-14


def test_normalize_errors():
    g = Grid1D.uniform(0, 1, 3)
    with pytest.raises(ZeroMassError):
        normalize_to_density(g.tabulate(np.zeros_like))
    with pytest.raises(ZeroMassError):
        normalize_to_density(GridFunction(g, [1.0, -0.1, 1.0]))


# -- CSV -------------------------------------------------------------------------

def test_csv_round_trip_is_exact(tmp_path):
    g = Grid1D(np.sort(np.random.default_rng(3).random(50)))
    fn = GridFunction(g, np.random.default_rng(4).standard_normal(50))
    path = tmp_path / "fn.csv"
    write_csv(fn, path, ("theta", "p"))
    assert path.read_text().splitlines()[0] == "theta,p"
    back = read_csv(path)
    np.testing.assert_array_equal(back.nodes, fn.nodes)
    np.testing.assert_array_equal(back.values, fn.values)


def test_csv_rejects_text_after_data(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,f\n0,1\n1,oops\n")
    with pytest.raises(GridError, match="bad.csv:3"):
        read_csv(path)
