"""Sub-Markov grid approximation of the invariant density.

The transfer operator is replaced by a matrix ``p_ij`` on a regular
partition that is dominated by the true kernel: for every ``x`` in atom
``i`` the chain puts at least ``p_ij`` mass on atom ``j``. The normalised
left Perron vector of ``p`` is then within a certified total-variation
distance of the invariant density. The certificate combines the worst row
deficiency ``kappa_+`` with a Doeblin minorization constant ``beta`` of
the averaged chain ``(1/N) sum_{k<=N} P^k``.

Two kernels are supported. For uniform noise the entries follow the
centre-distance rule and equal ``delta / (2 eps)`` rounded down. For the
wrapped Gaussian every entry is ``delta`` times a lower bound of the
density over the pair of atoms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .cover import INNER, Cover, build_cover, iteration_graph
from .errors import (
    CertificateUnobtainable,
    DegenerateScale,
    NoConvergence,
    NotIrreducible,
    PartitionMismatch,
    ResourceCap,
    ZeroMatrix,
)
from .intervals import Interval
from .kernels import gauss_envelope
from .mapdsl import MapSpec, eval_interval, eval_map, modulus_of_continuity, torus_distance
from .measures import GridDensity
from .noise import GAUSSIAN, UNIFORM, NoiseModel

C_M = 2.0  # mass-deficiency constant of the circle
DEFAULT_ETA = 2.0**-40
UNIFORM_MAX_ATOMS = 4096
GAUSSIAN_MAX_ATOMS = 8192


@dataclass(frozen=True, eq=False)
class GridOperator:
    """Sub-Markov matrix on the partition ``[k/n, (k+1)/n)``.

    Attributes
    ----------
    num_atoms : int
        Atoms in the full partition of the circle.
    matrix : scipy.sparse.csr_matrix or ndarray
        Entries ``p_ij`` between the atoms listed in ``support``.
    support : ndarray
        Atom indices carried by the matrix (all atoms unless restricted).
    p_hat : float or None
        Common value of the nonzero entries (uniform noise).
    eval_tol : float
        Precision used for map evaluation and entry rounding.
    noise_epsilon : float
    modulus : float
        Modulus of continuity of the map at the atom diameter.
    deficiency_bound : float
        Certified bound on ``1 - row sum``.
    kind : {"uniform", "gaussian"}
    """

    num_atoms: int
    matrix: object
    support: np.ndarray
    p_hat: float | None
    eval_tol: float
    noise_epsilon: float
    modulus: float
    deficiency_bound: float
    kind: str

    @property
    def delta(self) -> float:
        return 1.0 / self.num_atoms

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def kappa_minus(self) -> float:
        return float(max(0.0, 1.0 - self.row_sums.max()))

    @property
    def kappa_plus(self) -> float:
        return float(min(1.0, 1.0 - self.row_sums.min()))

    def left_apply(self, v: np.ndarray) -> np.ndarray:
        """Row vector times matrix, on the support coordinates."""
        if sparse.issparse(self.matrix):
            return np.asarray(self.matrix.T @ v).ravel()
        return v @ self.matrix

    def to_full(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.num_atoms)
        out[self.support] = v
        return out


def _support(num_atoms: int, restrict) -> np.ndarray:
    """Atoms meeting any of the ``restrict`` arcs (all atoms when None)."""
    if restrict is None:
        return np.arange(num_atoms)
    lo = np.arange(num_atoms) / num_atoms
    keep = np.zeros(num_atoms, dtype=bool)
    for a, b in restrict:
        # atom [lo, lo + 1/n] meets arc (a, b) on the circle
        for shift in (-1.0, 0.0, 1.0):
            keep |= (lo + 1.0 / num_atoms > a + shift) & (lo < b + shift)
    return np.flatnonzero(keep)


def _center_images(system: MapSpec, centers: np.ndarray, eta: float) -> np.ndarray:
    """Map values at the centres, each within ``eta`` (torus distance)."""
    enc = eval_interval(system.body[0], [Interval(centers, centers)])
    vals = np.mod(enc.mid, 1.0)
    bad = np.flatnonzero(enc.width > eta)
    for i in bad:
        vals[i] = float(eval_map(system, float(centers[i]), eta)[0])
    return vals


def build_submarkov(system: MapSpec, noise: NoiseModel, num_atoms: int,
                    eval_tol: float = DEFAULT_ETA, restrict=None) -> GridOperator:
    """Assemble the sub-Markov matrix for uniform or wrapped-Gaussian noise.

    Parameters
    ----------
    system : MapSpec
        One-dimensional map.
    noise : NoiseModel
    num_atoms : int
        Partition size ``n``; ``delta = 1/n``.
    eval_tol : float
        Map-evaluation precision ``eta``; must satisfy ``eta <= delta/8``.
    restrict : list of (float, float), optional
        Arcs of a forward-invariant set; only atoms meeting them are kept.

    Raises
    ------
    DegenerateScale
        Uniform noise with ``eps - m(delta) - 2 eta - delta <= 0``.
    """
    if system.dim != 1:
        raise PartitionMismatch("grid operators are implemented for dim=1")
    n = int(num_atoms)
    delta = 1.0 / n
    if eval_tol > delta / 8:
        raise ValueError("eval_tol must be at most delta/8")
    modulus = modulus_of_continuity(system, delta)
    support = _support(n, restrict)
    if noise.kind == GAUSSIAN:
        return _build_gaussian(system, noise, n, eval_tol, modulus, support)
    eps = noise.epsilon
    threshold = eps - modulus - 2.0 * eval_tol - delta
    if threshold <= 0:
        raise DegenerateScale(
            f"eps - m(delta) - 2 eta - delta = {threshold:.3g} <= 0 at {n} atoms")
    p_hat = math.floor(delta / (2.0 * eps) / eval_tol) * eval_tol
    centers = (support + 0.5) / n
    images = _center_images(system, centers, eval_tol)
    width = int(math.ceil(threshold * n)) + 1
    offsets = np.arange(-width, width + 1)
    base = np.floor(images * n).astype(np.int64)
    cols = np.mod(base[:, None] + offsets[None, :], n)
    keep = torus_distance(images[:, None], (cols + 0.5) / n) < threshold
    if restrict is not None:
        pos = np.full(n, -1)
        pos[support] = np.arange(support.size)
        cols = pos[cols]
        keep &= cols >= 0
    rows = np.broadcast_to(np.arange(support.size)[:, None], cols.shape)
    mat = sparse.csr_matrix(
        (np.full(int(keep.sum()), p_hat), (rows[keep], cols[keep])),
        shape=(support.size, support.size))
    mat.sum_duplicates()
    bound = C_M * (modulus + 2.0 * delta + 2.0 * eval_tol) / eps
    return GridOperator(n, mat, support, p_hat, eval_tol, eps, modulus, bound, UNIFORM)


def _build_gaussian(system, noise, n, eta, modulus, support) -> GridOperator:
    lo = support / n
    hi = (support + 1.0) / n
    enc = system.image_enclosure(lo, hi, pieces=2)
    dense = gauss_envelope(enc.lo, enc.hi, n, noise.epsilon, noise.wrap_terms)
    # exp/sum rounding is far below this relative guard
    dense *= (1.0 - 1e-12) / n
    if support.size != n:
        dense = dense[:, support]
    osc = 2.0 * (noise.density_max - noise.density_min)
    bound = osc * (modulus + 3.0 / n + 2.0 * eta) * (1.0 + 1e-12)
    return GridOperator(n, dense, support, None, eta, noise.epsilon, modulus, bound, GAUSSIAN)


def apply_operator(op: GridOperator, rho: GridDensity) -> GridDensity:
    """Push a density forward: ``w'_j = sum_i rho_i p_ij``.

    Raises
    ------
    PartitionMismatch
        If ``rho`` lives on a different partition.
    """
    if rho.num_atoms != op.num_atoms:
        raise PartitionMismatch(f"density has {rho.num_atoms} atoms, operator {op.num_atoms}")
    w = op.left_apply(rho.weights[op.support])
    return GridDensity(np.clip(op.to_full(w), 0.0, None))


def perron_vector(op: GridOperator, residual_tol: float = 1e-12,
                  max_iters: int = 100000) -> tuple[GridDensity, float]:
    """Normalised left Perron vector by power iteration.

    Returns
    -------
    psi : GridDensity
        Probability vector with ``||psi P - lambda psi||_1 <= residual_tol``.
    lam : float
        Perron eigenvalue ``||psi P||_1``.

    Raises
    ------
    ZeroMatrix
        Every entry is zero.
    NoConvergence
        The residual is still above ``residual_tol`` after ``max_iters``.
    """
    if op.row_sums.max() <= 0:
        raise ZeroMatrix("operator has no nonzero entries")
    k = op.support.size
    v = np.full(k, 1.0 / k)
    best = math.inf
    stall = 0
    res = math.inf
    for it in range(max_iters):
        w = op.left_apply(v)
        lam = w.sum()
        if lam <= 0:
            raise ZeroMatrix("iterate vanished")
        w /= lam
        nxt = op.left_apply(w)
        res = float(np.abs(nxt - nxt.sum() * w).sum())
        v = w
        if res <= residual_tol:
            lam = float(nxt.sum())
            return GridDensity(op.to_full(v)), lam
        if res < 0.999 * best:
            best, stall = res, 0
        else:
            stall += 1
            if stall > 2000:
                break
    raise NoConvergence(f"power iteration stalled at residual {res:.3g}", residual=res)


# ---------------------------------------------------------------- Doeblin certificate


@dataclass(frozen=True, eq=False)
class DoeblinCertificate:
    """Minorization of the averaged chain ``(1/N) sum_{k=1}^N P^k``.

    Attributes
    ----------
    cover_xi : Cover or None
        Cover used for the minorizing matrix (None when built on a partition).
    xi_irr : ndarray
        Atoms reachable from every atom.
    N_xi : int
        Largest hitting number into ``xi_irr``.
    n_avg : int
        Averaging length ``N >= N_xi`` used for ``beta``.
    beta : float
        ``sum_{j in xi_irr} min_i (1/N) sum_{k<=N} Q^k_ij``.
    q : float
        Smallest nonzero entry of ``Q``.
    betas : dict
        ``beta`` for every examined averaging length.
    beta_rowmin : float
        ``min_i sum_{j in xi_irr} (1/N) sum_k Q^k_ij``; reported only, since
        the minorizing measure has mass given by the column minima.
    """

    cover_xi: Cover | None
    xi_irr: np.ndarray
    N_xi: int
    n_avg: int
    beta: float
    q: float
    betas: dict = field(default_factory=dict)
    beta_rowmin: float = 0.0

    @property
    def hitting_lower_bound(self) -> float:
        """``(#xi_irr / N_xi) * q^N_xi``."""
        return self.xi_irr.size / self.N_xi * self.q**self.N_xi

    @property
    def averaged_lower_bound(self) -> float:
        """``(#xi_irr / n_avg) * q^N_xi``, valid for every ``n_avg >= N_xi``."""
        return self.xi_irr.size / self.n_avg * self.q**self.N_xi

    def with_n_avg(self, n: int) -> "DoeblinCertificate":
        from dataclasses import replace

        return replace(self, n_avg=n, beta=self.betas[n])

    def to_json(self) -> dict:
        return {
            "N_xi": self.N_xi,
            "n_avg": self.n_avg,
            "beta": self.beta,
            "beta_rowmin": self.beta_rowmin,
            "q": self.q,
            "xi_irr_size": int(self.xi_irr.size),
            "hitting_lower_bound": self.hitting_lower_bound,
            "cover_atoms": None if self.cover_xi is None else self.cover_xi.num_atoms,
            "cover_mesh": None if self.cover_xi is None else self.cover_xi.mesh,
        }


def _doeblin_from_matrix(Q: np.ndarray, cover: Cover | None, extra: int) -> DoeblinCertificate:
    Q = np.asarray(Q, dtype=float)
    A = Q > 0
    n = A.shape[0]
    if not A.any():
        raise NotIrreducible("minorizing matrix is zero")
    ncomp, labels = connected_components(sparse.csr_matrix(A), directed=True, connection="strong")
    # a strong component is a sink if no edge leaves it
    leaves = np.zeros(ncomp, dtype=bool)
    rows, cols = np.nonzero(A)
    leaves[labels[rows[labels[rows] != labels[cols]]]] = True
    sinks = np.flatnonzero(~leaves)
    if sinks.size != 1 or not A.any(axis=1).all():
        raise NotIrreducible(f"inner graph has {sinks.size} closed classes")
    xi = np.flatnonzero(labels == sinks[0])
    # hitting numbers N_ij = min{k >= 1 : (Q^k)_ij > 0} for j in xi
    hit = np.zeros((n, xi.size), dtype=np.int64)
    reach = A[:, xi].copy()
    hit[reach] = 1
    Ai = A.astype(np.float64)
    k = 1
    while not (hit > 0).all():
        k += 1
        if k > 4 * n:
            raise NotIrreducible("some atom never reaches the irreducible class")
        reach = (Ai @ reach.astype(np.float64)) > 0
        hit[(hit == 0) & reach] = k
    n_xi = int(hit.max())
    q = float(Q[A].min())
    betas, rowmins = {}, {}
    power = Q[:, xi].copy()
    acc = power.copy()
    for N in range(1, n_xi + extra + 1):
        if N > 1:
            power = Q @ power
            acc += power
        if N >= n_xi:
            avg = acc / N
            betas[N] = float(avg.min(axis=0).sum())
            rowmins[N] = float(avg.sum(axis=1).min())
    n_best = max(betas, key=lambda m: (betas[m] / (m + 1), -m))
    return DoeblinCertificate(cover, xi, n_xi, n_best, betas[n_best], q, betas, rowmins[n_best])


def doeblin_certificate(system: MapSpec, noise: NoiseModel, cover: Cover,
                        extra_lengths: int = 12, restrict=None) -> DoeblinCertificate:
    """Doeblin constant from the inner graph of a cover (uniform noise).

    ``Q_ij = |shrunken atom j| / (2 eps)`` on inner edges, where the shrunken
    atom is the part of atom ``j`` not covered by any other atom. Averaging
    lengths from ``N_xi`` to ``N_xi + extra_lengths`` are examined.

    Raises
    ------
    NotIrreducible
        The inner orbits do not share a common atom.
    """
    if noise.kind != UNIFORM:
        raise ValueError("cover-based certificates need uniform noise")
    graph = iteration_graph(system, cover, INNER)
    adj = graph.adjacency.toarray()
    if restrict is not None:
        keep = np.zeros(cover.num_atoms, dtype=bool)
        for a, b in restrict:
            for shift in (-1.0, 0.0, 1.0):
                keep |= (cover.hi > a + shift) & (cover.lo < b + shift)
        idx = np.flatnonzero(keep)
        adj = adj[np.ix_(idx, idx)]
    Q = adj * (cover.shrunken_length / noise.ball_volume)
    if cover.shrunken_length <= 0:
        raise NotIrreducible("cover atoms have empty shrunken parts")
    return _doeblin_from_matrix(Q, cover, extra_lengths)


def doeblin_certificate_matrix(op: GridOperator, extra_lengths: int = 30) -> DoeblinCertificate:
    """Doeblin constant from a dominated sub-Markov matrix on a partition."""
    Q = op.matrix.toarray() if sparse.issparse(op.matrix) else op.matrix
    return _doeblin_from_matrix(Q, None, extra_lengths)


def search_uniform_certificate(system: MapSpec, noise: NoiseModel, restrict=None,
                               levels=(16, 32, 64, 128, 256)) -> DoeblinCertificate:
    """Best cover-based certificate over a ladder of cover resolutions.

    Covers use a small overlap (1/64 of the arc spacing on each side) so the
    shrunken atoms keep most of their length. The certificate maximising
    ``beta / (n_avg + 1)`` is returned.

    Raises
    ------
    CertificateUnobtainable
        No resolution yields an irreducible inner graph.
    """
    best = None
    errors = []
    for n in levels:
        step = 1.0 / n
        mesh = step * (1.0 + 2.0 / 64)
        cover = Cover(n, mesh, noise.epsilon)
        try:
            cert = doeblin_certificate(system, noise, cover, restrict=restrict)
        except NotIrreducible as exc:
            errors.append(f"{n} atoms: {exc}")
            continue
        if best is None or cert.beta / (cert.n_avg + 1) > best.beta / (best.n_avg + 1):
            best = cert
    if best is None:
        raise CertificateUnobtainable("no Doeblin certificate: " + "; ".join(errors))
    return best


# ---------------------------------------------------------------- certified solve


@dataclass(frozen=True)
class ErrorCertificate:
    """Certified distance between the grid density and the invariant density.

    ``tv_bound = (C / theta) * [1 - (1/N) sum_{k=1}^N (1 - kappa_plus)^k]``
    in the total-variation convention ``sup_A |mu(A) - nu(A)|``.
    """

    kappa_minus: float
    kappa_plus: float
    lam: float
    spectral_C: float
    spectral_theta: float
    n_avg: int
    tv_bound: float
    delta: float
    eta: float
    deficiency_bound: float
    num_atoms: int

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "eta": self.eta,
            "num_atoms": self.num_atoms,
            "lambda": self.lam,
            "kappa_minus": self.kappa_minus,
            "kappa_plus": self.kappa_plus,
            "beta": self.spectral_theta,
            "C": self.spectral_C,
            "N_avg": self.n_avg,
            "deficiency_bound": self.deficiency_bound,
            "tv_bound": self.tv_bound,
        }


def tv_bound_formula(C: float, theta: float, kappa_plus: float, N: int) -> float:
    k = np.arange(1, N + 1)
    return C / theta * float(1.0 - np.mean((1.0 - kappa_plus) ** k))


@dataclass(frozen=True, eq=False)
class GridResult:
    density: GridDensity
    certificate: ErrorCertificate
    doeblin: DoeblinCertificate
    operator: GridOperator


def _certify(system, noise, restrict, doeblin_atoms):
    if noise.kind == UNIFORM:
        return search_uniform_certificate(system, noise, restrict=restrict)
    coarse = build_submarkov(system, noise, doeblin_atoms, restrict=restrict)
    try:
        return doeblin_certificate_matrix(coarse)
    except NotIrreducible as exc:
        raise CertificateUnobtainable(str(exc)) from exc


def invariant_density_grid(system: MapSpec, noise: NoiseModel, target_accuracy: float,
                           max_atoms: int | None = None, restrict=None,
                           doeblin_atoms: int = 2048, start_atoms: int = 64,
                           eval_tol: float = DEFAULT_ETA) -> GridResult:
    """Grid density with certified total-variation error ``<= target_accuracy``.

    The Doeblin certificate is obtained first (from covers for uniform
    noise, from a coarser grid for the wrapped Gaussian). The partition is
    then doubled until the predicted bound with the measured ``kappa_+``
    meets the target, and the Perron vector is computed at that size.

    Raises
    ------
    CertificateUnobtainable
        No minorization constant could be established.
    ResourceCap
        The target needs more than ``max_atoms`` atoms.
    """
    if max_atoms is None:
        max_atoms = GAUSSIAN_MAX_ATOMS if noise.kind == GAUSSIAN else UNIFORM_MAX_ATOMS
    doeblin = _certify(system, noise, restrict, doeblin_atoms)
    n = start_atoms
    last = None
    while n <= max_atoms:
        try:
            op = build_submarkov(system, noise, n, eval_tol, restrict=restrict)
        except DegenerateScale:
            n *= 2
            continue
        kp = op.kappa_plus
        N, bound = min(((m, tv_bound_formula(1.0, b, kp, m)) for m, b in doeblin.betas.items()),
                       key=lambda t: t[1])
        last = bound
        if bound <= target_accuracy:
            psi, lam = perron_vector(op)
            cert = ErrorCertificate(op.kappa_minus, kp, lam, 1.0, doeblin.betas[N], N, bound,
                                    op.delta, op.eval_tol, op.deficiency_bound, n)
            return GridResult(psi, cert, doeblin.with_n_avg(N), op)
        n *= 2
    raise ResourceCap(f"tv bound {last} above {target_accuracy} at max_atoms={max_atoms}")


def averaged_iterates(op: GridOperator, rho: GridDensity, N: int, steps: int):
    """Yield ``Pbar^t rho`` (renormalised) for ``t = 1..steps``.

    ``Pbar = (1/N) sum_{k=1}^N P^k`` with ``P`` the grid matrix.
    """
    v = rho.weights[op.support].copy()
    for _ in range(steps):
        acc = np.zeros_like(v)
        w = v
        for _ in range(N):
            w = op.left_apply(w)
            acc += w
        v = acc / acc.sum()
        yield GridDensity(op.to_full(v))
