import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from ergomeasure.errors import EpsilonOutOfRange, UnsupportedKernel
from ergomeasure.noise import (
    kernel_deriv_coeff, make_rng, uniform_kernel, wrapped_gaussian, wrapped_gaussian_kernel,
)


def test_uniform_density_inside_and_outside():
    k = uniform_kernel(0.25, 1)
    assert k.density(0.5, 0.6) == pytest.approx(2.0)
    assert k.density(0.5, 0.8) == 0.0
    # wrap-around distance 0.1
    assert k.density(0.95, 0.05) == pytest.approx(2.0)


@pytest.mark.parametrize("eps", [0.0, 0.5, 0.6, -0.1])
def test_uniform_epsilon_guard(eps):
    with pytest.raises(EpsilonOutOfRange):
        uniform_kernel(eps)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_gaussian_epsilon_guard(eps):
    with pytest.raises(EpsilonOutOfRange):
        wrapped_gaussian_kernel(eps)


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.25])
def test_gaussian_normalisation(eps):
    k = wrapped_gaussian_kernel(eps)
    for y in (0.0, 0.37, 0.9):
        val, _ = integrate.quad(lambda x: float(k.density(y, x)), 0, 1, points=[y], limit=200, epsabs=1e-13)
        assert abs(val - 1) < 1e-9


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.25])
def test_uniform_normalisation(eps):
    k = uniform_kernel(eps)
    val, _ = integrate.quad(lambda x: float(k.density(0.3, x)), 0, 1, points=[0.3 - eps, 0.3 + eps], limit=200)
    assert abs(val - 1) < 1e-9


def test_gaussian_symmetry(gauss01, rng):
    y, x = rng.random(100), rng.random(100)
    np.testing.assert_allclose(gauss01.density(y, x), gauss01.density(x, y), rtol=1e-14)


def test_density_min_against_high_precision_reference(gauss01):
    with mpmath.workdps(60):
        s = mpmath.mpf("0.1")
        ref = sum(mpmath.npdf(mpmath.mpf("0.5") + k, 0, s) for k in range(-40, 41))
    assert gauss01.density_min <= float(ref)
    assert abs(gauss01.density_min - float(ref)) <= 1e-12 * float(ref)
    assert gauss01.wrap_terms * 2 + 1 >= 5


def test_bounds_sandwich(gauss01, rng):
    y, x = rng.random(10_000), rng.random(10_000)
    k = gauss01.density(y, x)
    assert np.all(gauss01.density_min <= k)
    assert np.all(k <= gauss01.density_max)


def test_theta_identity(gauss01):
    assert gauss01.mixing_theta == pytest.approx(1 - gauss01.density_min, abs=0)
    assert 0 < gauss01.mixing_theta < 1


def test_deriv_coeff_low_orders(gauss01):
    assert kernel_deriv_coeff(gauss01, 0.2, 0.5, 0) == pytest.approx(float(gauss01.density(0.2, 0.5)))
    assert abs(kernel_deriv_coeff(gauss01, 0.3, 0.3, 1)) < 1e-12
    with pytest.raises(UnsupportedKernel):
        kernel_deriv_coeff(uniform_kernel(0.1), 0.0, 0.1, 1)


def test_deriv_coeff_finite_difference(gauss01):
    h = 1e-4
    f = lambda x: float(gauss01.density(0.0, x))
    fd = (f(0.2 + h) - 2 * f(0.2) + f(0.2 - h)) / h**2 / 2
    assert float(kernel_deriv_coeff(gauss01, 0.0, 0.2, 2)) == pytest.approx(fd, rel=1e-5)


def test_deriv_coeff_against_mpmath_taylor(gauss01):
    with mpmath.workdps(40):
        s = mpmath.mpf("0.1")
        f = lambda x: sum(mpmath.npdf(x + k, 0, s) for k in range(-6, 7))
        coeffs = mpmath.taylor(f, mpmath.mpf("0.13"), 12)
    for l in range(13):
        got = float(kernel_deriv_coeff(gauss01, 0.0, 0.13, l))
        assert got == pytest.approx(float(coeffs[l]), rel=1e-9, abs=1e-9 * abs(float(coeffs[0])))


def test_coefficient_bound(gauss01, rng):
    y, x = rng.random(100), rng.random(100)
    for l in range(41):
        c = np.abs(kernel_deriv_coeff(gauss01, y, x, l))
        assert np.all(c <= gauss01.analytic_C * math.exp(gauss01.analytic_gamma * l))


def test_uniform_samples_stay_in_ball():
    k = uniform_kernel(0.1)
    s = k.sample(np.full(10_000, 0.5), make_rng(1))
    assert np.all(np.abs(s - 0.5) <= 0.1)


def test_gaussian_sample_mean(gauss01):
    n = 100_000
    s = gauss01.sample(np.full(n, 0.5), make_rng(2))
    assert abs(s.mean() - 0.5) <= 3 * 0.1 / math.sqrt(n)


def test_gaussian_sample_distribution(gauss01):
    s = gauss01.sample(np.full(200_000, 0.1), make_rng(3))
    counts = np.bincount((s * 20).astype(int), minlength=20)
    edges = np.linspace(0, 1, 21)
    probs = [integrate.quad(lambda x: float(gauss01.density(0.1, x)), a, b)[0] for a, b in zip(edges[:-1], edges[1:])]
    expect = np.array(probs) * s.size
    band = 4 * np.sqrt(expect * (1 - np.array(probs)))
    assert np.all(np.abs(counts - expect) <= band + 1)


def test_seed_determinism(gauss01):
    a = gauss01.sample(np.zeros(50), make_rng(42))
    b = gauss01.sample(np.zeros(50), make_rng(42))
    assert np.array_equal(a, b)
    c = gauss01.sample(np.zeros(50), make_rng(43))
    assert not np.array_equal(a, c)


def test_wrapped_gaussian_far_from_tail():
    # a single wrap already accounts for nearly all of the mass near the centre
    assert wrapped_gaussian(0.0, 0.1, 3) == pytest.approx(1 / (0.1 * math.sqrt(2 * math.pi)), rel=1e-15)
