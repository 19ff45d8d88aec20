"""Taylor-coefficient discretisation of the transfer operator (wrapped Gaussian noise).

A density is stored on each atom ``a`` of a regular partition as the
coefficients of its Taylor expansion about the atom centre ``x_a``. For
analytic kernels the pushed-forward density has coefficients

    rho'_{i,l} = sum_{j,m} rho_{j,m} int_{a_j} (y - x_j)^m d^l_x K(f(y), x_i) / l! dy

which is a block matrix acting on the coefficient vector. Truncating at order
``N`` gives a finite matrix whose ``t``-th power applied to the uniform
density approximates the invariant density to ``2^-n`` in sup norm, for
``t`` and ``N`` affine in ``n``.

Internally coefficients are scaled by ``(h/2)^k`` (``h`` the atom width) so
that each block entry is of order one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractionViolated, GammaTooLarge, PartitionMismatch, QuadratureFailure
from .kernels import taylor_table
from .mapdsl import MapSpec
from .measures import AnalyticDensity
from .noise import GAUSSIAN, NoiseModel

MIXING_FACTOR = 8.5


def _ceil(x: float) -> int:
    # ratios such as 2 ln 2 / ln 2 come out one ulp above an integer; the
    # final bound is re-checked, so a relative tolerance here is safe
    return math.ceil(x - 1e-12 * max(1.0, abs(x)))


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Truncated block matrix on scaled Taylor coefficients.

    Attributes
    ----------
    num_atoms : int
    order : int
        Truncation order ``N``.
    matrix : ndarray, shape (n (N+1), n (N+1))
        ``matrix[(i, l), (j, m)] = (h/2)^(l-m) * P^{(i,j)}(l, m)``.
    quad_nodes : int
        Gauss-Legendre nodes per atom.
    quad_error : float
        Largest entry change between ``quad_nodes - 8`` and ``quad_nodes`` nodes.
    quad_row_error : float
        Row-sum norm of that change.
    C, gamma, theta : float
        Kernel constants used by the bounds.
    """

    num_atoms: int
    order: int
    matrix: np.ndarray
    quad_nodes: int
    quad_error: float
    quad_row_error: float
    C: float
    gamma: float
    theta: float

    @property
    def diam(self) -> float:
        return 1.0 / self.num_atoms

    @property
    def half_width(self) -> float:
        return 0.5 / self.num_atoms

    def block(self, i: int, j: int) -> np.ndarray:
        """Raw block ``P^{(i,j)}(l, m)``."""
        s = self.order + 1
        scaled = self.matrix[i * s:(i + 1) * s, j * s:(j + 1) * s]
        k = np.arange(s)
        return scaled * self.half_width ** (k[None, :] - k[:, None])


def _scaled(rho: AnalyticDensity, order: int, h2: float) -> np.ndarray:
    c = np.zeros((rho.num_atoms, order + 1))
    m = min(order, rho.order) + 1
    c[:, :m] = rho.coeffs[:, :m]
    return (c * h2 ** np.arange(order + 1)[None, :]).ravel()


def _unscaled(vec: np.ndarray, n: int, order: int, h2: float) -> np.ndarray:
    return vec.reshape(n, order + 1) / h2 ** np.arange(order + 1)[None, :]


def _assemble(system: MapSpec, noise: NoiseModel, n: int, order: int, nodes: int) -> np.ndarray:
    h2 = 0.5 / n
    s, w = np.polynomial.legendre.leggauss(nodes)
    centers = (np.arange(n) + 0.5) / n
    ys = (centers[:, None] + h2 * s[None, :]).ravel()
    images = np.mod(system.lift(ys), 1.0)
    table = taylor_table(centers, images, noise.epsilon, noise.wrap_terms, order, h2)
    table = table.reshape(n, n, nodes, order + 1)
    moments = w[:, None] * s[:, None] ** np.arange(order + 1)[None, :]
    blocks = h2 * np.einsum("ijql,qm->iljm", table, moments, optimize=True)
    size = n * (order + 1)
    return blocks.reshape(size, size)


def build_spectral(system: MapSpec, noise: NoiseModel, num_atoms: int, order: int,
                   quad_tol: float = 1e-13, max_nodes: int | None = None) -> SpectralOperator:
    """Assemble the truncated operator by Gauss-Legendre quadrature.

    The node count starts at ``order + 16`` and grows by 16 until two rules
    that differ by 8 nodes agree to ``quad_tol`` (relative to the largest
    entry, and never below a few ulps).

    Raises
    ------
    GammaTooLarge
        ``exp(gamma) / num_atoms >= 1``.
    QuadratureFailure
        The node cap is reached before the rules agree.
    """
    if noise.kind != GAUSSIAN or system.dim != 1:
        raise ValueError("the spectral method needs a 1-D map and wrapped Gaussian noise")
    rho = math.exp(noise.analytic_gamma) / num_atoms
    if rho >= 1.0:
        raise GammaTooLarge(f"exp(gamma) * diam = {rho:.3g} >= 1; use more atoms")
    if max_nodes is None:
        max_nodes = 4 * order + 96
    nodes = order + 16
    while True:
        coarse = _assemble(system, noise, num_atoms, order, nodes)
        fine = _assemble(system, noise, num_atoms, order, nodes + 8)
        scale = float(np.abs(fine).max())
        err = float(np.abs(fine - coarse).max())
        if err <= max(quad_tol, 64 * np.finfo(float).eps) * max(scale, 1.0):
            break
        nodes += 16
        if nodes > max_nodes:
            raise QuadratureFailure(f"entries still change by {err:.3g} at {nodes} nodes")
    C = spectral_constant(noise)
    row_err = float(np.abs(fine - coarse).sum(axis=1).max())
    return SpectralOperator(num_atoms, order, fine, nodes + 8, err, row_err, C,
                            noise.analytic_gamma, noise.mixing_theta)


def spectral_constant(noise: NoiseModel) -> float:
    """Constant for both the coefficient envelope and the mixing estimate.

    The sup-norm mixing bound ``|P^t rho - pi| <= 2 C theta^t`` holds with
    ``C = density_max / theta`` by the Doeblin argument on the density; the
    envelope needs ``analytic_C``. The larger value serves both.
    """
    return max(noise.analytic_C, noise.density_max / noise.mixing_theta)


@dataclass(frozen=True)
class TruncationBudget:
    """Iteration count ``t`` and truncation order ``N`` for precision ``2^-n``.

    ``t = t_slope * n + t_intercept`` and ``N = N_slope * n + N_intercept``
    with integer coefficients.
    """

    n_bits: int
    t: int
    N: int
    q_N: float
    k: float
    bound: float
    contraction: float
    t_slope: int
    t_intercept: int
    N_slope: int
    N_intercept: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def truncation_budget(C: float, gamma: float, theta: float, diam: float,
                      n_bits: int, volume: float = 1.0) -> TruncationBudget:
    """Affine ``t(n)``, ``N(n)`` with ``||pi - P_N^t rho||_inf <= 2^-n``.

    With ``k = n ln 2 + ln(8.5 C)``, ``r = exp(gamma) diam`` and
    ``L = ln(1/r)``, the real-valued choices are ``t = k / ln(1/theta)`` and
    ``N + 1 = (2k + ln(1/(1-r)) - ln ln(1/theta)) / L`` (the correction
    ``max(0, ln(|M| C) - k)`` vanishes because ``k > ln C``). Slopes and
    intercepts are rounded up separately so both stay exactly affine in
    ``n``. The final error estimate is evaluated and checked.

    Raises
    ------
    ContractionViolated
        ``theta`` outside ``(0, 1)`` or ``exp(gamma) diam >= 1``.
    """
    if not (0.0 < theta < 1.0):
        raise ContractionViolated(f"theta = {theta} must lie in (0, 1)")
    r = math.exp(gamma) * diam
    if r >= 1.0:
        raise ContractionViolated(f"exp(gamma) * diam = {r} must be < 1")
    lt = math.log(1.0 / theta)
    L = math.log(1.0 / r)
    log_c = math.log(MIXING_FACTOR * C)
    t_slope = _ceil(math.log(2.0) / lt)
    t_icpt = _ceil(log_c / lt)
    N_slope = _ceil(2.0 * math.log(2.0) / L)
    extra = max(0.0, math.log(volume * C) - log_c)
    N_icpt = _ceil((2.0 * log_c + extra + math.log(1.0 / (1.0 - r)) - math.log(lt)) / L - 1.0)
    N_icpt = max(N_icpt, 0)
    t = t_slope * n_bits + t_icpt
    N = N_slope * n_bits + N_icpt
    q = C * r ** (N + 1) / (1.0 - r)
    bound = (1.0 + volume * q) * math.exp(volume * q * t) * q * t + q + 2.0 * C * theta**t
    k = n_bits * math.log(2.0) + log_c
    if bound > 2.0**-n_bits:
        raise ContractionViolated(f"budget bound {bound:.3g} exceeds 2^-{n_bits}")
    return TruncationBudget(n_bits, t, N, q, k, bound, r, t_slope, t_icpt, N_slope, N_icpt)


def project_truncate(rho: AnalyticDensity, N: int) -> AnalyticDensity:
    """Drop Taylor coefficients above order ``N``."""
    return AnalyticDensity(rho.coeffs[:, :N + 1].copy(), rho.bound_C, rho.bound_gamma)


def truncation_tail_bound(rho: AnalyticDensity, N: int) -> float:
    """Sup-norm change caused by :func:`project_truncate` under the envelope."""
    z = math.exp(rho.bound_gamma) * rho.diam / 2.0
    return rho.bound_C * z ** (N + 1) / (1.0 - z)


def _matrix_power_apply(A: np.ndarray, v: np.ndarray, t: int) -> np.ndarray:
    size = A.shape[0]
    if t <= max(64, size * max(1, t.bit_length()) // 8):
        for _ in range(t):
            v = A @ v
        return v
    base = A
    while t:
        if t & 1:
            v = base @ v
        t >>= 1
        if t:
            base = base @ base
    return v


def iterate_density(op: SpectralOperator, rho0: AnalyticDensity, t: int) -> AnalyticDensity:
    """``P_N^t rho0``; powers of two are formed by repeated squaring when ``t`` is large.

    Raises
    ------
    PartitionMismatch
        ``rho0`` lives on a different partition.
    """
    if rho0.num_atoms != op.num_atoms:
        raise PartitionMismatch(f"density has {rho0.num_atoms} atoms, operator {op.num_atoms}")
    h2 = op.half_width
    v = _matrix_power_apply(op.matrix, _scaled(rho0, op.order, h2), int(t))
    return AnalyticDensity(_unscaled(v, op.num_atoms, op.order, h2), op.C, op.gamma)


def sup_norm(rho: AnalyticDensity, samples_per_atom: int = 16) -> float:
    """Sup norm over a sample grid that includes every atom's endpoints."""
    from .measures import eval_analytic_density

    n = rho.num_atoms
    u = np.linspace(-0.5, 0.5, samples_per_atom + 1)
    u[-1] = 0.5 - 1e-12
    x = (np.arange(n)[:, None] + 0.5 + u[None, :]) / n
    vals, _ = eval_analytic_density(rho, x.ravel())
    return float(np.abs(vals).max())


@dataclass(frozen=True, eq=False)
class SpectralResult:
    density: AnalyticDensity
    budget: TruncationBudget
    operator: SpectralOperator
    quad_slack: float

    @property
    def certified_error(self) -> float:
        return self.budget.bound + self.quad_slack

    def to_json(self) -> dict:
        return {
            "num_atoms": self.operator.num_atoms,
            "order": self.operator.order,
            "quad_nodes": self.operator.quad_nodes,
            "quad_error": self.operator.quad_error,
            "quad_slack": self.quad_slack,
            "budget": self.budget.to_json(),
            "certified_error": self.certified_error,
        }


def default_partition(noise: NoiseModel) -> int:
    """Smallest power of two with ``exp(gamma) * diam <= 1/2``."""
    need = 2.0 * math.exp(noise.analytic_gamma)
    return 1 << max(0, math.ceil(math.log2(need) - 1e-12))


def invariant_density_spectral(system: MapSpec, noise: NoiseModel, n_bits: int,
                               num_atoms: int | None = None) -> SpectralResult:
    """Analytic invariant density with sup-norm error ``<= 2^-n_bits``.

    The partition depends only on the noise. The returned ``quad_slack``
    estimates the extra error from quadrature: ``t`` times the row-sum norm
    of the entry change between the two quadrature rules, times the
    largest scaled coefficient of the result.
    """
    n = default_partition(noise) if num_atoms is None else num_atoms
    C = spectral_constant(noise)
    budget = truncation_budget(C, noise.analytic_gamma, noise.mixing_theta, 1.0 / n, n_bits)
    op = build_spectral(system, noise, n, budget.N)
    rho0 = AnalyticDensity(np.ones((n, 1)), C, noise.analytic_gamma)
    rho = iterate_density(op, rho0, budget.t)
    h2 = op.half_width
    scaled = np.abs(rho.coeffs * h2 ** np.arange(op.order + 1)[None, :]).max()
    slack = budget.t * op.quad_row_error * float(scaled)
    return SpectralResult(rho, budget, op, slack)
