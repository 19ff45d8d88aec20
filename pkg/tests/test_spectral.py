import math

import numpy as np
import pytest
from scipy import integrate

from ergomeasure.errors import ContractionViolated, GammaTooLarge, PartitionMismatch
from ergomeasure.mapdsl import parse_map
from ergomeasure.measures import AnalyticDensity, eval_analytic_density
from ergomeasure.noise import uniform_kernel, wrapped_gaussian_kernel
from ergomeasure.spectral import (
    build_spectral, default_partition, invariant_density_spectral, iterate_density,
    project_truncate, spectral_constant, sup_norm, truncation_budget, truncation_tail_bound,
)


@pytest.fixture(scope="module")
def wide():
    """Wide noise keeps the iteration counts small."""
    return wrapped_gaussian_kernel(0.25)


def _uniform(op, C=None):
    return AnalyticDensity(np.ones((op.num_atoms, 1)), op.C if C is None else C, op.gamma)


# ---------------------------------------------------------------- budget


def test_budget_example():
    b = truncation_budget(1.0, 0.0, 0.5, 0.5, 20)
    assert b.k == pytest.approx(16.0, abs=0.01)
    assert b.t == 24
    # direct evaluation of the real-valued order formula, then rounded up
    k = 20 * math.log(2) + math.log(8.5)
    direct = math.ceil((2 * k + math.log(2) - math.log(math.log(2))) / math.log(2) - 1)
    assert direct <= b.N <= direct + 1
    assert b.bound <= 2.0**-20
    q = 0.5 ** (b.N + 1) / 0.5
    assert b.q_N == pytest.approx(q)
    assert b.bound == pytest.approx((1 + q) * math.exp(q * b.t) * q * b.t + q + 2 * 0.5**b.t)


def test_budget_affine_growth():
    rows = [truncation_budget(2.0, 1.0, 0.7, 0.1, n) for n in range(8, 33)]
    for a, b in zip(rows, rows[1:]):
        assert b.t - a.t == a.t_slope == math.ceil(math.log(2) / math.log(1 / 0.7))
        assert b.N - a.N == a.N_slope
    ns = np.array([8, 16, 24, 32])
    ts = np.array([truncation_budget(2.0, 1.0, 0.7, 0.1, n).t for n in ns])
    Ns = np.array([truncation_budget(2.0, 1.0, 0.7, 0.1, n).N for n in ns])
    for ys in (ts, Ns):
        slope, icpt = np.polyfit(ns, ys, 1)
        np.testing.assert_allclose(slope * ns + icpt, ys, atol=1e-9)


def test_budget_theta_limit():
    ts = [truncation_budget(1.0, 0.0, th, 0.5, 10).t for th in (0.5, 0.9, 0.99, 0.999)]
    assert ts == sorted(ts) and ts[-1] > 1000
    for th in (1.0, 1.5, 0.0):
        with pytest.raises(ContractionViolated):
            truncation_budget(1.0, 0.0, th, 0.5, 10)
    with pytest.raises(ContractionViolated):
        truncation_budget(1.0, 1.0, 0.5, 0.5, 10)


def test_default_partition(gauss01, wide):
    for noise in (gauss01, wide):
        n = default_partition(noise)
        assert math.exp(noise.analytic_gamma) / n <= 0.5
        assert math.exp(noise.analytic_gamma) / (n // 2) > 0.5
    assert default_partition(gauss01) == 64


# ---------------------------------------------------------------- assembly


def test_guards(sine, gauss01):
    with pytest.raises(GammaTooLarge):
        build_spectral(sine, gauss01, 16, 4)
    with pytest.raises(ValueError):
        build_spectral(sine, uniform_kernel(0.1), 64, 4)


@pytest.fixture(scope="module")
def sine_op(wide):
    return build_spectral(parse_map("sine2:0.1"), wide, 16, 20)


def test_block_entry_bound(sine_op, wide):
    op = sine_op
    diam = op.diam
    l = np.arange(op.order + 1)[:, None]
    m = np.arange(op.order + 1)[None, :]
    env = diam * (diam / 2) ** m * wide.analytic_C * np.exp(wide.analytic_gamma * l)
    for i in range(op.num_atoms):
        for j in range(op.num_atoms):
            assert np.all(np.abs(op.block(i, j)) <= env * (1 + 1e-9) + 1e-300)


def test_identity_zeroth_entry(identity, gauss01):
    n = 64
    op = build_spectral(identity, gauss01, n, 8, quad_tol=1e-14)
    centers = (np.arange(n) + 0.5) / n
    for i, j in [(0, 0), (0, 1), (5, 3), (10, 63), (31, 32)]:
        # ten subintervals per atom as the finer reference rule
        ref = sum(integrate.quad(lambda y: float(gauss01.density(y, centers[i])), a, a + 0.1 / n, epsabs=1e-16)[0]
                  for a in j / n + np.arange(10) * 0.1 / n)
        assert op.block(i, j)[0, 0] == pytest.approx(ref, rel=1e-12, abs=1e-16)


def test_rotation_reflection_symmetry(wide):
    # reflecting x -> 1 - x turns rotation by a into rotation by -a and
    # multiplies entry (l, m) by (-1)^(l+m)
    n = 16
    plus = build_spectral(parse_map("rotation:0.3"), wide, n, 6)
    minus = build_spectral(parse_map("rotation:0.7"), wide, n, 6)
    sign = (-1.0) ** np.add.outer(np.arange(7), np.arange(7))
    for i in range(n):
        for j in range(n):
            np.testing.assert_allclose(plus.block(i, j), sign * minus.block(n - 1 - i, n - 1 - j),
                                       rtol=1e-9, atol=1e-12 * np.abs(plus.block(i, j)).max())
    # odd derivative at the atom hit by the rotated centre
    i = 3
    j = int(np.floor(((i + 0.5) / n - 0.3) % 1 * n))
    a, b = plus.block(i, j)[1, 0], minus.block(n - 1 - i, n - 1 - j)[1, 0]
    assert a != 0 and np.sign(a) == -np.sign(b)


def test_quadrature_metadata(sine_op):
    assert sine_op.quad_nodes >= sine_op.order + 24
    scale = max(1.0, np.abs(sine_op.matrix).max())
    assert sine_op.quad_error <= max(1e-13, 64 * np.finfo(float).eps) * scale
    assert sine_op.quad_row_error >= sine_op.quad_error


# ---------------------------------------------------------------- truncation


def test_project_truncate(rng):
    n, gamma, C = 8, 1.0, 2.0
    k = np.arange(21)
    coeffs = C * np.exp(gamma * k)[None, :] * rng.uniform(-1, 1, (n, 21))
    rho = AnalyticDensity(coeffs, C, gamma)
    p = project_truncate(rho, 5)
    assert p.order == 5
    assert np.array_equal(project_truncate(p, 5).coeffs, p.coeffs)
    x = rng.random(100)
    full, _ = eval_analytic_density(rho, x)
    cut, _ = eval_analytic_density(p, x)
    assert np.all(np.abs(full - cut) <= truncation_tail_bound(rho, 5))


# ---------------------------------------------------------------- iteration


def test_zero_steps_is_identity(sine_op, rng):
    c = rng.normal(size=(16, 5))
    rho = AnalyticDensity(c, 1.0, sine_op.gamma)
    out = iterate_density(sine_op, rho, 0)
    np.testing.assert_allclose(out.coeffs[:, :5], c, rtol=1e-13)
    assert np.all(out.coeffs[:, 5:] == 0)


def test_linearity(sine_op, rng):
    a = AnalyticDensity(rng.normal(size=(16, 3)), 1.0, sine_op.gamma)
    b = AnalyticDensity(rng.normal(size=(16, 3)), 1.0, sine_op.gamma)
    ab = AnalyticDensity(2 * a.coeffs - 3 * b.coeffs, 1.0, sine_op.gamma)
    lhs = iterate_density(sine_op, ab, 3).coeffs
    rhs = 2 * iterate_density(sine_op, a, 3).coeffs - 3 * iterate_density(sine_op, b, 3).coeffs
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * np.abs(lhs).max())


def test_partition_mismatch(sine_op):
    with pytest.raises(PartitionMismatch):
        iterate_density(sine_op, AnalyticDensity(np.ones((8, 1)), 1.0, 0.0), 1)


def test_rotation_keeps_constant(wide):
    op = build_spectral(parse_map("rotation:0.3"), wide, 16, 20)
    out = iterate_density(op, _uniform(op), 5)
    np.testing.assert_allclose(out.coeffs[:, 0], 1.0, atol=1e-10)
    np.testing.assert_allclose(out.coeffs[:, 1:] * op.half_width ** np.arange(1, 21), 0.0, atol=1e-10)


def test_envelope_and_mass_each_step(sine_op):
    q = sine_op.C * (math.exp(sine_op.gamma) * sine_op.diam) ** (sine_op.order + 1) / (1 - math.exp(sine_op.gamma) * sine_op.diam)
    rho = _uniform(sine_op)
    for t in range(1, 11):
        rho = iterate_density(sine_op, rho, 1)
        assert rho.envelope_violations(slack=0.1) == 0
        assert abs(rho.mass() - 1) <= q * t + 1e-12


def test_truncation_bound_random_vectors(wide, rng):
    # the maps below preserve Lebesgue measure, so the exact operator does not
    # increase the sup norm and only truncation can
    for name in ("rotation:0.3", "doubling"):
        op = build_spectral(parse_map(name), wide, 16, 12)
        r = math.exp(op.gamma) * op.diam
        factor = 1 + op.C * r ** (op.order + 1) / (1 - r)
        for _ in range(10):
            # piecewise constant test densities: the sampled sup norm is exact
            eta = AnalyticDensity(rng.uniform(-1, 1, (16, 1)), op.C, op.gamma)
            out = iterate_density(op, eta, 1)
            assert sup_norm(out) <= factor * sup_norm(eta) * (1 + 1e-12)


def test_error_chain_against_higher_budget(wide):
    sine = parse_map("sine2:0.1")
    res = invariant_density_spectral(sine, wide, 8)
    b = res.budget
    ref_op = build_spectral(sine, wide, res.operator.num_atoms, 4 * b.N)
    ref = iterate_density(ref_op, _uniform(ref_op), 4 * b.t)
    diff = AnalyticDensity(
        np.pad(res.density.coeffs, ((0, 0), (0, ref.order - res.density.order))) - ref.coeffs,
        ref.bound_C, ref.bound_gamma)
    err = sup_norm(diff, 64)
    assert err <= b.bound
    assert res.certified_error >= b.bound


def test_wide_noise_precision_32(wide):
    res = invariant_density_spectral(parse_map("sine2:0.1"), wide, 32)
    assert res.budget.bound <= 2.0**-32
    assert res.density.envelope_violations(slack=0.1) == 0
    assert abs(res.density.mass() - 1) <= res.budget.q_N * res.budget.t + 1e-12


@pytest.mark.parametrize("name", ["rotation:0.3", "doubling"])
def test_lebesgue_invariant_maps(name, gauss01):
    res = invariant_density_spectral(parse_map(name), gauss01, 10)
    rho = res.density
    tol = 2.0**-10
    np.testing.assert_allclose(rho.coeffs[:, 0], 1.0, atol=tol)
    h2 = res.operator.half_width
    assert np.abs(rho.coeffs[:, 1:] * h2 ** np.arange(1, rho.order + 1)).max() <= tol
    assert abs(sup_norm(rho) - 1.0) <= tol


def test_result_json(wide):
    res = invariant_density_spectral(parse_map("rotation:0.3"), wide, 8)
    d = res.to_json()
    assert d["certified_error"] == res.budget.bound + res.quad_slack
    assert d["budget"]["t"] == res.budget.t
    assert spectral_constant(wide) >= wide.analytic_C
