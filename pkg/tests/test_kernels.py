import numpy as np
import pytest

from ergomeasure import _accel, kernels
from ergomeasure.noise import make_rng, wrapped_gaussian

pytestmark = pytest.mark.skipif(not _accel.numba_available(), reason="numba not installed")


def test_env_flag_selects_backend(backend):
    assert _accel.use_numba() == (backend == "numba")


def test_gauss_envelope_backends_agree(gauss01, rng):
    lo = rng.random(300)
    hi = lo + rng.random(300) * 0.3
    n = 97
    a = kernels.gauss_envelope_numba(lo, hi, n, 0.1, gauss01.wrap_terms)
    b = kernels.gauss_envelope_numpy(lo, hi, n, 0.1, gauss01.wrap_terms)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=0)


def test_gauss_envelope_is_lower_bound(gauss01, rng):
    n = 20
    lo = rng.random(40)
    hi = lo + rng.random(40) * 0.2
    env = kernels.gauss_envelope(lo, hi, n, 0.1, gauss01.wrap_terms)
    for i in range(lo.size):
        z = np.linspace(lo[i], hi[i], 41)
        for j in range(n):
            y = np.linspace(j / n, (j + 1) / n, 41)
            vals = wrapped_gaussian(y[None, :] - z[:, None], 0.1, gauss01.wrap_terms)
            assert env[i, j] <= vals.min() * (1 + 1e-12)


def test_taylor_table_backends_agree(gauss01, rng):
    t = rng.random(7)
    p = rng.random(33)
    a = kernels.taylor_table_numba(t, p, 0.1, gauss01.wrap_terms, 25, 1 / 128)
    b = kernels.taylor_table_numpy(t, p, 0.1, gauss01.wrap_terms, 25, 1 / 128)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14 * np.abs(b).max())


def test_taylor_table_scaling(gauss01):
    t, p = np.array([0.3]), np.array([0.1])
    unscaled = kernels.taylor_table(t, p, 0.1, gauss01.wrap_terms, 6, 1.0)
    scaled = kernels.taylor_table(t, p, 0.1, gauss01.wrap_terms, 6, 0.25)
    np.testing.assert_allclose(scaled[0, 0], unscaled[0, 0] * 0.25 ** np.arange(7), rtol=1e-12)


def test_run_chain_backends_agree(sine, gauss01):
    z = gauss01.increments(make_rng(5), 5000)
    a = kernels.run_chain_numba(sine, 0.3, z)
    b = kernels.run_chain_numpy(sine, 0.3, z)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert np.all((0 <= a) & (a < 1))


def test_run_chain_dispatch(backend, rotation):
    z = np.zeros(4)
    np.testing.assert_allclose(kernels.run_chain(rotation, 0.0, z), [0.3, 0.6, 0.9, 0.2], atol=1e-15)
