"""Noise kernels: uniform ball and wrapped Gaussian on the torus.

The transition density from a point ``y`` is ``K(y, x)``; the chain moves
from ``x_t`` to a sample of ``K(f(x_t), .)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import ndtri

from .errors import EpsilonOutOfRange, UnsupportedKernel
from .mapdsl import torus_distance

UNIFORM = "uniform"
GAUSSIAN = "gaussian"

_TAIL_BITS = 60
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseModel:
    """Perturbation kernel with the constants used by the error bounds.

    Attributes
    ----------
    kind : {"uniform", "gaussian"}
    epsilon : float
        Ball radius (uniform) or standard deviation (gaussian).
    dim : int
    analytic_C, analytic_gamma : float or None
        Constants with ``|d^k/dx^k K(y, x)| / k! <= C * exp(gamma * k)``.
    density_min, density_max : float
        Lower and upper bounds of the density over all pairs.
    mixing_theta : float or None
        ``1 - density_min`` when the density is bounded below.
    wrap_terms : int
        Number of lattice translates summed on each side (gaussian).
    """

    kind: str
    epsilon: float
    dim: int = 1
    analytic_C: float | None = None
    analytic_gamma: float | None = None
    density_min: float = 0.0
    density_max: float = 0.0
    mixing_theta: float | None = None
    wrap_terms: int = 0

    @property
    def ball_volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / gamma_fn(d / 2 + 1) * self.epsilon**d

    def density(self, y, x) -> np.ndarray:
        """Transition density ``K(y, x)`` for the chain centred at ``y``."""
        if self.kind == UNIFORM:
            y = np.asarray(y, dtype=float)
            x = np.asarray(x, dtype=float)
            if self.dim == 1:
                dist = torus_distance(y, x)
            else:
                dist = np.sqrt(np.sum(torus_distance(y, x) ** 2, axis=-1))
            return np.where(dist < self.epsilon, 1.0 / self.ball_volume, 0.0)
        return wrapped_gaussian(np.asarray(x, dtype=float) - np.asarray(y, dtype=float),
                                self.epsilon, self.wrap_terms)

    def sample(self, center, rng: np.random.Generator) -> np.ndarray:
        """Draw one point per entry of ``center`` from the kernel at ``center``."""
        center = np.asarray(center, dtype=float)
        shape = center.shape if self.dim == 1 else center.shape[:-1]
        return np.mod(center + self.increments(rng, shape), 1.0)

    def increments(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Displacements ``x - center`` with the kernel's law."""
        if isinstance(shape, int):
            shape = (shape,)
        shape = tuple(shape)
        if self.kind == GAUSSIAN:
            return self.epsilon * ndtri(dyadic_uniforms(rng, shape))
        if self.dim == 1:
            return self.epsilon * (2.0 * rng.random(shape) - 1.0)
        z = rng.standard_normal(shape + (self.dim,))
        z /= np.linalg.norm(z, axis=-1, keepdims=True)
        r = self.epsilon * rng.random(shape) ** (1.0 / self.dim)
        return z * r[..., None]


def dyadic_uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniforms at dyadic midpoints ``(k + 1/2) / 2^53``, never 0 or 1."""
    k = rng.integers(0, 2**53, size=shape, dtype=np.int64)
    return (k.astype(float) + 0.5) * 2.0**-53


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _wrap_count(sigma: float) -> int:
    # nearest omitted translate sits at distance >= K + 1/2 from any |u| <= 1/2
    need = 2.0 * (_TAIL_BITS * math.log(2.0) + math.log(4.0 / (sigma * _SQRT_2PI)))
    return max(2, math.ceil(sigma * math.sqrt(need) - 0.5))


def wrapped_gaussian(u, sigma: float, wrap_terms: int) -> np.ndarray:
    """``sum_k g(u + k)`` for ``|k| <= wrap_terms``, ``g`` the N(0, sigma^2) density."""
    u = np.mod(np.asarray(u, dtype=float) + 0.5, 1.0) - 0.5
    total = np.zeros_like(u)
    for k in range(-wrap_terms, wrap_terms + 1):
        total += np.exp(-0.5 * ((u + k) / sigma) ** 2)
    return total / (sigma * _SQRT_2PI)


def uniform_kernel(epsilon: float, dim: int = 1) -> NoiseModel:
    """Uniform density on the torus ball of radius ``epsilon``.

    Raises
    ------
    EpsilonOutOfRange
        Unless ``0 < epsilon < 1/2``.
    """
    if not (0.0 < epsilon < 0.5):
        raise EpsilonOutOfRange(f"uniform noise needs 0 < epsilon < 1/2, got {epsilon}")
    model = NoiseModel(kind=UNIFORM, epsilon=float(epsilon), dim=int(dim))
    return replace(model, density_max=1.0 / model.ball_volume)


def wrapped_gaussian_kernel(epsilon: float) -> NoiseModel:
    """Wrapped Gaussian with standard deviation ``epsilon`` on the circle.

    The analytic constants come from Cauchy estimates on the complex strip
    of half-width ``r = epsilon / 2``: on the strip the modulus of each
    translate is at most ``exp(r^2 / (2 epsilon^2)) = exp(1/8)`` times its
    real value, so ``C = density_max * exp(1/8)`` and ``exp(gamma) = 1/r``.

    Raises
    ------
    EpsilonOutOfRange
        Unless ``0 < epsilon <= 1/4``.
    """
    if not (0.0 < epsilon <= 0.25):
        raise EpsilonOutOfRange(f"wrapped Gaussian needs 0 < epsilon <= 1/4, got {epsilon}")
    sigma = float(epsilon)
    wraps = _wrap_count(sigma)
    tail = 2.0**-_TAIL_BITS
    c_min = float(wrapped_gaussian(0.5, sigma, wraps)) * (1.0 - 1e-14)
    c_max = float(wrapped_gaussian(0.0, sigma, wraps)) * (1.0 + 1e-14) + tail
    return NoiseModel(
        kind=GAUSSIAN,
        epsilon=sigma,
        dim=1,
        analytic_C=c_max * math.exp(0.125) * (1.0 + 1e-14),
        analytic_gamma=math.log(2.0 / sigma),
        density_min=c_min,
        density_max=c_max,
        mixing_theta=1.0 - c_min,
        wrap_terms=wraps,
    )


def gaussian_taylor_table(u, sigma: float, order: int, scale: float = 1.0) -> np.ndarray:
    """Scaled Taylor coefficients of the Gaussian density.

    Returns ``T[l] = scale^l * g^{(l)}(u) / l!`` for ``l = 0..order``, using
    ``g^{(l)}(u) / l! = g(u) * a_l`` with the Hermite-type recursion
    ``a_{l+1} = -((u/sigma^2) a_l + a_{l-1} / sigma^2) / (l + 1)``.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty((order + 1,) + u.shape)
    g = np.exp(-0.5 * (u / sigma) ** 2) / (sigma * _SQRT_2PI)
    s2 = scale / sigma**2
    prev = np.zeros_like(u)
    cur = g
    out[0] = cur
    for l in range(order):
        nxt = -(u * s2 * cur + scale * s2 * prev) / (l + 1)
        prev, cur = cur, nxt
        out[l + 1] = cur
    return out


def kernel_deriv_coeff(model: NoiseModel, y, x, l: int) -> np.ndarray:
    """``l``-th Taylor coefficient of ``x' -> K(y, x')`` at ``x``.

    Raises
    ------
    UnsupportedKernel
        For the uniform kernel, which is not analytic.
    """
    if model.kind != GAUSSIAN:
        raise UnsupportedKernel("Taylor coefficients need an analytic kernel")
    u = np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float) + 0.5, 1.0) - 0.5
    total = np.zeros_like(u)
    for k in range(-model.wrap_terms, model.wrap_terms + 1):
        total += gaussian_taylor_table(u + k, model.epsilon, l)[l]
    return total
