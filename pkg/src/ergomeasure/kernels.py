"""Hot loops, each with a numba and a numpy implementation.

The public functions dispatch on :func:`ergomeasure._accel.use_numba`. The
``*_numpy`` and ``*_numba`` variants are exposed so tests and benchmarks can
compare them directly.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import _accel
from ._accel import njit
from .mapdsl import MapSpec, to_source

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# ---------------------------------------------------------------- Gaussian lower-envelope matrix


def _far_distance(lo, hi, y_lo, y_hi):
    """Upper bound on the largest torus distance between [lo, hi] and [y_lo, y_hi]."""
    # differences y - x fill [a, b]; pad for rounding so the bound stays upper
    a = y_lo - hi - 1e-15
    b = y_hi - lo + 1e-15
    if b - a >= 1.0:
        return 0.5
    if math.ceil(a - 0.5) + 0.5 <= b:
        return 0.5
    return max(abs(a - math.floor(a + 0.5)), abs(b - math.floor(b + 0.5)))


_far_distance_nb = njit(cache=True)(_far_distance)


def _wrapped_gauss_scalar(u, sigma, wraps):
    s = 0.0
    for k in range(-wraps, wraps + 1):
        z = (u + k) / sigma
        s += math.exp(-0.5 * z * z)
    return s * _INV_SQRT_2PI / sigma


_wrapped_gauss_nb = njit(cache=True)(_wrapped_gauss_scalar)


@njit(cache=True)
def _gauss_envelope_numba(img_lo, img_hi, n, sigma, wraps, out):
    delta = 1.0 / n
    for i in range(img_lo.shape[0]):
        lo = img_lo[i]
        hi = img_hi[i]
        for j in range(n):
            d = _far_distance_nb(lo, hi, j * delta, (j + 1) * delta)
            out[i, j] = _wrapped_gauss_nb(d, sigma, wraps)


def gauss_envelope_numba(img_lo, img_hi, n, sigma, wraps):
    out = np.empty((img_lo.shape[0], n))
    _gauss_envelope_numba(np.ascontiguousarray(img_lo), np.ascontiguousarray(img_hi),
                          n, sigma, wraps, out)
    return out


def gauss_envelope_numpy(img_lo, img_hi, n, sigma, wraps):
    y_lo = np.arange(n) / n
    y_hi = (np.arange(n) + 1) / n
    out = np.empty((img_lo.shape[0], n))
    chunk = max(1, 2**22 // n)
    for s in range(0, img_lo.shape[0], chunk):
        lo = img_lo[s:s + chunk, None]
        hi = img_hi[s:s + chunk, None]
        a = y_lo[None, :] - hi - 1e-15
        b = y_hi[None, :] - lo + 1e-15
        anti = (b - a >= 1.0) | (np.ceil(a - 0.5) + 0.5 <= b)
        da = np.abs(a - np.floor(a + 0.5))
        db = np.abs(b - np.floor(b + 0.5))
        d = np.where(anti, 0.5, np.maximum(da, db))
        tot = np.zeros_like(d)
        for w in range(-wraps, wraps + 1):
            tot += np.exp(-0.5 * ((d + w) / sigma) ** 2)
        out[s:s + chunk] = tot * (_INV_SQRT_2PI / sigma)
    return out


def gauss_envelope(img_lo, img_hi, n, sigma, wraps):
    """Lower bound of ``K(z, y)`` over ``z`` in each image box and ``y`` in each atom.

    Row ``i`` corresponds to the lift interval ``[img_lo[i], img_hi[i]]``,
    column ``j`` to the atom ``[j/n, (j+1)/n]``. The wrapped Gaussian is
    decreasing in torus distance, so the minimum sits at the largest
    distance between the two arcs.
    """
    if _accel.use_numba():
        return gauss_envelope_numba(img_lo, img_hi, n, sigma, wraps)
    return gauss_envelope_numpy(img_lo, img_hi, n, sigma, wraps)


# ---------------------------------------------------------------- spectral integrand table


@njit(cache=True)
def _taylor_table_numba(targets, images, sigma, wraps, order, scale, out):
    # out[i, p, l] = sum_k scale^l g^{(l)}(targets[i] - images[p] + k) / l!
    s2 = scale / (sigma * sigma)
    c = _INV_SQRT_2PI / sigma
    inv = np.empty(order + 1)
    for l in range(order + 1):
        inv[l] = 1.0 / (l + 1)
    for i in range(targets.shape[0]):
        for p in range(images.shape[0]):
            u0 = targets[i] - images[p]
            u0 -= math.floor(u0 + 0.5)
            row = out[i, p]
            row[:] = 0.0
            for k in range(-wraps, wraps + 1):
                u = u0 + k
                z = u / sigma
                cur = c * math.exp(-0.5 * z * z)
                if cur == 0.0:
                    continue
                a = u * s2
                b = scale * s2
                prev = 0.0
                row[0] += cur
                for l in range(order):
                    nxt = -(a * cur + b * prev) * inv[l]
                    prev = cur
                    cur = nxt
                    row[l + 1] += cur


def taylor_table_numba(targets, images, sigma, wraps, order, scale):
    out = np.empty((targets.shape[0], images.shape[0], order + 1))
    _taylor_table_numba(np.ascontiguousarray(targets, dtype=float),
                        np.ascontiguousarray(images, dtype=float),
                        sigma, wraps, order, scale, out)
    return out


def taylor_table_numpy(targets, images, sigma, wraps, order, scale):
    from .noise import gaussian_taylor_table

    u0 = targets[:, None] - images[None, :]
    u0 = u0 - np.floor(u0 + 0.5)
    out = np.zeros((order + 1,) + u0.shape)
    for k in range(-wraps, wraps + 1):
        out += gaussian_taylor_table(u0 + k, sigma, order, scale)
    return np.moveaxis(out, 0, -1)


def taylor_table(targets, images, sigma, wraps, order, scale):
    """Scaled Taylor coefficients of the wrapped Gaussian in its second slot.

    ``out[i, p, l] = scale^l / l! * d^l/dx^l K(images[p], x)`` at
    ``x = targets[i]``.
    """
    if _accel.use_numba():
        return taylor_table_numba(targets, images, sigma, wraps, order, scale)
    return taylor_table_numpy(targets, images, sigma, wraps, order, scale)


# ---------------------------------------------------------------- Monte-Carlo stepping


@lru_cache(maxsize=64)
def _compiled_stepper(source: str):
    """Compile a trajectory loop for one lift expression."""
    import numba

    ns: dict = {"math": math}
    exec(f"def _lift(x1):\n    return {source}\n", ns)
    lift = numba.njit(ns["_lift"])

    @numba.njit
    def run(x0, increments, out):
        x = x0
        for t in range(increments.shape[0]):
            y = lift(x) + increments[t]
            x = y - math.floor(y)
            if x >= 1.0:
                x = 0.0
            out[t] = x

    return run


def run_chain_numba(system: MapSpec, x0: float, increments: np.ndarray) -> np.ndarray:
    out = np.empty(increments.shape[0])
    _compiled_stepper(to_source(system.body[0], "math"))(float(x0), increments, out)
    return out


def run_chain_numpy(system: MapSpec, x0: float, increments: np.ndarray) -> np.ndarray:
    lift = system.python_lift
    out = np.empty(increments.shape[0])
    x = float(x0)
    floor = math.floor
    for t, z in enumerate(increments.tolist()):
        y = lift(x) + z
        x = y - floor(y)
        if x >= 1.0:
            x = 0.0
        out[t] = x
    return out


def run_chain(system: MapSpec, x0: float, increments: np.ndarray) -> np.ndarray:
    """States ``x_1..x_T`` of ``x_{t+1} = F(x_t) + z_t mod 1`` for a 1-D map."""
    if _accel.use_numba():
        return run_chain_numba(system, x0, increments)
    return run_chain_numpy(system, x0, increments)
