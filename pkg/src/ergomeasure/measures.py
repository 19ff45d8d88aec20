"""Densities on the circle and the distances used by the certificates.

Total variation is ``sup_A |mu(A) - nu(A)|``, which equals half the L1
distance of the densities.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MassMismatch, PartitionMismatch


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant density on the regular partition ``[k/n, (k+1)/n)``.

    Attributes
    ----------
    weights : ndarray
        Atom masses (density value times atom length).
    half_width : ndarray or None
        Optional per-atom statistical error half-width.
    """

    weights: np.ndarray
    half_width: np.ndarray | None = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if w.sum() > 1.0 + 1e-12:
            raise ValueError(f"total mass {w.sum()} exceeds 1")
        object.__setattr__(self, "weights", w)

    @property
    def num_atoms(self) -> int:
        return self.weights.size

    @property
    def delta(self) -> float:
        return 1.0 / self.num_atoms

    @property
    def left_endpoints(self) -> np.ndarray:
        return np.arange(self.num_atoms) / self.num_atoms

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.num_atoms) + 0.5) / self.num_atoms

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def values(self) -> np.ndarray:
        """Density values on each atom."""
        return self.weights * self.num_atoms

    def refine(self, factor: int) -> "GridDensity":
        """Split every atom into ``factor`` equal atoms."""
        w = np.repeat(self.weights / factor, factor)
        hw = None if self.half_width is None else np.repeat(self.half_width / factor, factor)
        return GridDensity(w, hw)

    def coarsen(self, factor: int) -> "GridDensity":
        """Merge consecutive groups of ``factor`` atoms."""
        if self.num_atoms % factor:
            raise PartitionMismatch(f"{self.num_atoms} atoms not divisible by {factor}")
        return GridDensity(self.weights.reshape(-1, factor).sum(axis=1))

    def normalized(self) -> "GridDensity":
        return GridDensity(self.weights / self.weights.sum())

    @classmethod
    def uniform(cls, num_atoms: int) -> "GridDensity":
        return cls(np.full(num_atoms, 1.0 / num_atoms))

    @classmethod
    def point_mass(cls, num_atoms: int, x: float) -> "GridDensity":
        w = np.zeros(num_atoms)
        w[int(math.floor((x % 1.0) * num_atoms)) % num_atoms] = 1.0
        return cls(w)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["atom_index", "left_endpoint", "mass"])
        for i, (a, m) in enumerate(zip(self.left_endpoints, self.weights)):
            wr.writerow([i, f"{a:.17g}", f"{m:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridDensity":
        rows = list(csv.DictReader(io.StringIO(text)))
        w = np.array([float(r["mass"]) for r in rows])
        idx = np.array([int(r["atom_index"]) for r in rows])
        if not np.array_equal(idx, np.arange(len(rows))):
            raise PartitionMismatch("atom indices must be 0..n-1 in order")
        return cls(w)


def common_refinement(a: GridDensity, b: GridDensity) -> tuple[GridDensity, GridDensity]:
    n = math.lcm(a.num_atoms, b.num_atoms)
    return a.refine(n // a.num_atoms), b.refine(n // b.num_atoms)


def tv_distance(a: GridDensity, b: GridDensity) -> float:
    """Total variation ``sup_A |a(A) - b(A)|`` on a common refinement."""
    a, b = common_refinement(a, b)
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


def _segment_abs_integral(p: np.ndarray, q: np.ndarray, c: float, length: float) -> np.ndarray:
    """``int |G - c|`` over segments where ``G`` is linear from ``p`` to ``q``."""
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    out = length * np.abs(0.5 * (p + q) - c)
    inside = (lo < c) & (c < hi)
    span = np.where(inside, hi - lo, 1.0)
    crossing = length * ((lo - c) ** 2 + (hi - c) ** 2) / (2.0 * span)
    return np.where(inside, crossing, out)


def w1_distance(a: GridDensity, b: GridDensity) -> float:
    """Wasserstein-1 distance on the circle.

    Uses ``W1 = min_c int_0^1 |F_a(x) - F_b(x) - c| dx`` with ``F`` the
    cumulative distribution functions. ``G = F_a - F_b`` is piecewise linear
    for piecewise-constant densities, so the optimal ``c`` is the median of
    the pushforward of Lebesgue measure by ``G`` and every segment integral
    has a closed form.

    Raises
    ------
    MassMismatch
        If the total masses differ by more than 1e-9.
    """
    if abs(a.total_mass - b.total_mass) > 1e-9:
        raise MassMismatch(f"masses {a.total_mass} and {b.total_mass} differ")
    a, b = common_refinement(a, b)
    n = a.num_atoms
    g = np.concatenate([[0.0], np.cumsum(a.weights - b.weights)])
    p, q = g[:-1], g[1:]
    length = 1.0 / n
    lo, hi = np.minimum(p, q), np.maximum(p, q)

    def below(c):
        # Lebesgue measure of {G < c}
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            ratio = np.clip((c - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
        frac = np.where(hi > lo, ratio, (lo < c).astype(float))
        return length * frac.sum()

    left, right = float(lo.min()), float(hi.max())
    for _ in range(200):
        mid = 0.5 * (left + right)
        if below(mid) < 0.5:
            left = mid
        else:
            right = mid
        if right - left <= 1e-17 * max(1.0, abs(mid)):
            break
    c = 0.5 * (left + right)
    return float(_segment_abs_integral(p, q, c, length).sum())


@dataclass(frozen=True, eq=False)
class AnalyticDensity:
    """Per-atom Taylor expansions on the regular partition.

    On atom ``a`` with center ``x_a`` the density is
    ``sum_k coeffs[a, k] * (x - x_a)^k``.

    Attributes
    ----------
    coeffs : ndarray, shape (num_atoms, order + 1)
        Raw Taylor coefficients.
    bound_C, bound_gamma : float
        Envelope ``|coeffs[a, k]| <= C * exp(gamma * k)``.
    """

    coeffs: np.ndarray
    bound_C: float
    bound_gamma: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "coeffs", c)
        if math.exp(self.bound_gamma) * self.diam >= 1.0:
            raise ValueError("exp(gamma) * diam must be < 1")

    @property
    def num_atoms(self) -> int:
        return self.coeffs.shape[0]

    @property
    def order(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def diam(self) -> float:
        return 1.0 / self.num_atoms

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.num_atoms) + 0.5) / self.num_atoms

    def envelope_violations(self, slack: float = 0.0) -> int:
        k = np.arange(self.order + 1)
        env = self.bound_C * np.exp(self.bound_gamma * k) * (1.0 + slack)
        return int(np.count_nonzero(np.abs(self.coeffs) > env[None, :]))

    def mass(self) -> float:
        """Exact integral of the stored polynomials over the circle."""
        h2 = 0.5 * self.diam
        k = np.arange(self.order + 1)
        moments = np.where(k % 2 == 0, 2.0 * h2 ** (k + 1) / (k + 1), 0.0)
        return float((self.coeffs @ moments).sum())

    def atom_masses(self) -> np.ndarray:
        h2 = 0.5 * self.diam
        k = np.arange(self.order + 1)
        moments = np.where(k % 2 == 0, 2.0 * h2 ** (k + 1) / (k + 1), 0.0)
        return self.coeffs @ moments

    def to_json(self) -> dict:
        return {
            "atoms": [
                {"center": float(c), "coeffs": [float(v) for v in row]}
                for c, row in zip(self.centers, self.coeffs)
            ],
            "C": float(self.bound_C),
            "gamma": float(self.bound_gamma),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnalyticDensity":
        coeffs = np.array([a["coeffs"] for a in obj["atoms"]], dtype=float)
        return cls(coeffs, float(obj["C"]), float(obj["gamma"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def eval_analytic_density(rho: AnalyticDensity, x) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the stored expansions and a bound on the omitted tail.

    Returns
    -------
    value : ndarray
        ``sum_{k<=N} rho[a, k] (x - x_a)^k`` on the atom containing ``x``.
    tail : ndarray
        ``C (e^gamma r)^(N+1) / (1 - e^gamma r)`` with ``r = |x - x_a|``.
    """
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    n = rho.num_atoms
    idx = np.minimum((x * n).astype(int), n - 1)
    r = x - rho.centers[idx]
    coeffs = rho.coeffs[idx]
    value = np.zeros_like(x)
    for k in range(rho.order, -1, -1):
        value = value * r + coeffs[..., k]
    z = math.exp(rho.bound_gamma) * np.abs(r)
    tail = rho.bound_C * z ** (rho.order + 1) / (1.0 - z)
    return value, tail


def analytic_to_grid(rho: AnalyticDensity, num_atoms: int) -> GridDensity:
    """Exact atom masses of an analytic density on a finer regular grid.

    ``num_atoms`` must be a multiple of ``rho.num_atoms``. Negative masses
    (possible only from truncation error) are clipped to zero.
    """
    if num_atoms % rho.num_atoms:
        raise PartitionMismatch("target grid must refine the analytic partition")
    sub = num_atoms // rho.num_atoms
    h2 = 0.5 * rho.diam
    edges = -h2 + rho.diam * np.arange(sub + 1) / sub
    k = np.arange(rho.order + 1)
    prim = edges[:, None] ** (k + 1)[None, :] / (k + 1)[None, :]
    moments = prim[1:] - prim[:-1]
    masses = rho.coeffs @ moments.T
    w = np.clip(masses.ravel(), 0.0, None)
    return GridDensity(w / max(w.sum(), 1.0))
