import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import wasserstein_distance

from ergomeasure.errors import MassMismatch, PartitionMismatch
from ergomeasure.measures import (
    AnalyticDensity, GridDensity, analytic_to_grid, eval_analytic_density, tv_distance, w1_distance,
)


def _point(n, x):
    return GridDensity.point_mass(n, x)


def test_w1_identity():
    a = GridDensity.uniform(16)
    assert w1_distance(a, a) == 0.0


def test_w1_point_masses():
    n = 1000
    assert w1_distance(_point(n, 0.05), _point(n, 0.35)) == pytest.approx(0.3, abs=1 / n)


def test_w1_uniform_vs_point_at_zero():
    n = 400
    assert w1_distance(GridDensity.uniform(n), _point(n, 0.0)) == pytest.approx(0.25, abs=1 / n)


def test_w1_wraps_around():
    n = 100
    assert w1_distance(_point(n, 0.02), _point(n, 0.92)) == pytest.approx(0.1, abs=1e-12)


def test_w1_mass_mismatch():
    with pytest.raises(MassMismatch):
        w1_distance(GridDensity.uniform(4), GridDensity(np.array([0.5, 0, 0, 0])))


def _circle_w1_bruteforce(a, b):
    """Minimum over cut points of the line W1 of the cut distributions (fine atoms as points)."""
    n = a.num_atoms
    x = a.centers
    best = math.inf
    for cut in range(n):
        xs = np.concatenate([x[cut:], x[:cut] + 1.0])
        wa = np.concatenate([a.weights[cut:], a.weights[:cut]])
        wb = np.concatenate([b.weights[cut:], b.weights[:cut]])
        best = min(best, wasserstein_distance(xs, xs, wa, wb))
    return best


@settings(max_examples=40, deadline=None)
@given(arrays(float, 12, elements=st.floats(0, 1)), arrays(float, 12, elements=st.floats(0, 1)))
def test_w1_against_cut_point_oracle(wa, wb):
    if wa.sum() < 1e-3 or wb.sum() < 1e-3:
        return
    a, b = GridDensity(wa / wa.sum()), GridDensity(wb / wb.sum())
    # on point masses at atom centres the circle W1 is the minimum over cut points;
    # spreading mass over atoms changes it by at most one atom width
    assert abs(w1_distance(a, b) - _circle_w1_bruteforce(a, b)) <= 1 / 12 + 1e-12


def test_tv_examples():
    u = GridDensity.uniform(8)
    assert tv_distance(u, u) == 0
    assert tv_distance(_point(8, 0.1), _point(8, 0.9)) == 1.0
    half = GridDensity(np.array([0.5, 0.5, 0.0, 0.0]))
    assert tv_distance(GridDensity.uniform(4), half) == pytest.approx(0.5)


def test_tv_common_refinement():
    a = GridDensity(np.array([1.0, 0.0]))
    b = GridDensity(np.array([1 / 3, 1 / 3, 1 / 3]))
    # a = 2 on [0, 1/2); b uniform
    assert tv_distance(a, b) == pytest.approx(0.5)


_dens = arrays(float, 8, elements=st.floats(0.0, 1.0)).filter(lambda w: w.sum() > 1e-3).map(
    lambda w: GridDensity(w / w.sum()))


@settings(max_examples=200, deadline=None)
@given(_dens, _dens, _dens)
def test_metric_axioms(a, b, c):
    for d in (tv_distance, w1_distance):
        ab, ba = d(a, b), d(b, a)
        assert ab >= 0
        assert ab == pytest.approx(ba, abs=1e-12)
        assert ab <= d(a, c) + d(c, b) + 1e-12
        assert d(a, a) <= 1e-12
    assert (tv_distance(a, b) <= 1e-12) == (w1_distance(a, b) <= 1e-12)


@settings(max_examples=100, deadline=None)
@given(_dens, _dens)
def test_refinement_invariance(a, b):
    assert tv_distance(a.refine(2), b.refine(2)) == pytest.approx(tv_distance(a, b), abs=1e-12)
    assert w1_distance(a.refine(2), b.refine(2)) == pytest.approx(w1_distance(a, b), abs=1e-12)


def test_grid_density_validation():
    with pytest.raises(ValueError):
        GridDensity(np.array([-0.1, 0.5]))
    with pytest.raises(ValueError):
        GridDensity(np.array([0.7, 0.7]))
    with pytest.raises(PartitionMismatch):
        GridDensity.uniform(6).coarsen(4)


def test_csv_round_trip(rng):
    w = rng.random(10)
    d = GridDensity(w / w.sum())
    text = d.to_csv()
    assert text.splitlines()[0] == "atom_index,left_endpoint,mass"
    assert np.array_equal(GridDensity.from_csv(text).weights, d.weights)


def test_analytic_constant():
    rho = AnalyticDensity(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]), 1.0, 0.0)
    v, tail = eval_analytic_density(rho, np.array([0.1, 0.6]))
    np.testing.assert_allclose(v, 1.0)
    assert rho.mass() == pytest.approx(1.0)


def test_analytic_linear_single_atom():
    rho = AnalyticDensity(np.array([[0.0, 1.0, 0.0]]), 1.0, -0.1)
    v, _ = eval_analytic_density(rho, 0.3)
    assert float(v) == pytest.approx(-0.2)


def test_analytic_exponential_tail():
    N = 10
    coeffs = np.array([[1 / math.factorial(k) for k in range(N + 1)]])
    # at r = 0.1 the envelope C = 1, gamma = -0.1 still dominates the omitted terms 1/k!
    rho = AnalyticDensity(coeffs, 1.0, -0.1)
    v, tail = eval_analytic_density(rho, 0.6)
    assert abs(float(v) - math.exp(0.1)) <= float(tail)
    assert float(tail) < 1e-10


def test_analytic_requires_contraction():
    with pytest.raises(ValueError):
        AnalyticDensity(np.ones((2, 3)), 1.0, math.log(2.0))


def test_analytic_json_round_trip(rng):
    rho = AnalyticDensity(rng.normal(size=(4, 3)), 2.0, 1.0)
    back = AnalyticDensity.from_json(rho.to_json())
    assert np.array_equal(back.coeffs, rho.coeffs)
    assert set(rho.to_json()) == {"atoms", "C", "gamma"}
    assert set(rho.to_json()["atoms"][0]) == {"center", "coeffs"}


def test_analytic_to_grid_exact_masses():
    # density 1 + (x - 1/4) on the first atom of two, 1 - ... mirror on the second
    rho = AnalyticDensity(np.array([[1.0, 1.0], [1.0, -1.0]]), 2.0, 0.0)
    g = analytic_to_grid(rho, 4)
    # integrals over [0, 1/4], [1/4, 1/2] of 1 + (x - 1/4)
    expect = [0.25 - 1 / 32, 0.25 + 1 / 32, 0.25 + 1 / 32, 0.25 - 1 / 32]
    np.testing.assert_allclose(g.weights, expect)
    with pytest.raises(PartitionMismatch):
        analytic_to_grid(rho, 3)
