"""Simulation of the noisy chain, used as an independent check of the solvers.

The chain is ``x_{t+1} = F(x_t) + z_t mod 1`` with ``z_t`` drawn from the
noise kernel. Increments come from a Philox generator keyed by the seed, so
a trajectory depends only on ``(system, noise, x0, steps, seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cover import DECOMPOSED, DecompositionResult
from .errors import InsufficientSamples
from .kernels import run_chain
from .mapdsl import MapSpec
from .measures import GridDensity
from .noise import NoiseModel, make_rng

ESCAPED = "Escaped"
DEFAULT_BURN_IN = 1000
_Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_1..x_T`` of one run (``x0`` is not included)."""

    states: np.ndarray
    seed: int
    burn_in: int = 0
    x0: float | np.ndarray = 0.0

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def kept(self) -> np.ndarray:
        return self.states[self.burn_in:]

    def to_csv(self) -> str:
        lines = ["step,x"]
        lines += [f"{t + 1},{x:.17g}" for t, x in enumerate(self.states.tolist())]
        return "\n".join(lines) + "\n"


def default_burn_in(doeblin=None) -> int:
    """Ten mixing lengths when a Doeblin certificate is known, else 1000."""
    if doeblin is None:
        return DEFAULT_BURN_IN
    return 10 * int(doeblin.N_xi)


def simulate(system: MapSpec, noise: NoiseModel, x0, steps: int, seed: int,
             burn_in: int = 0) -> Trajectory:
    """Run the chain for ``steps`` steps from ``x0``.

    One-dimensional maps go through the compiled stepper; the lift is
    evaluated in double precision, well inside the ``2^-40`` evaluation
    budget for the builtin maps.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = make_rng(seed)
    if system.dim == 1:
        z = noise.increments(rng, steps)
        states = run_chain(system, float(x0) % 1.0, z)
        return Trajectory(states, seed, burn_in, float(x0))
    z = noise.increments(rng, steps)
    x = np.mod(np.asarray(x0, dtype=float), 1.0)
    states = np.empty((steps, system.dim))
    for t in range(steps):
        x = np.mod(system.lift(x) + z[t], 1.0)
        # mod of a tiny negative number rounds to 1.0
        x[x >= 1.0] = 0.0
        states[t] = x
    return Trajectory(states, seed, burn_in, np.asarray(x0, dtype=float))


def transition_samples(system: MapSpec, noise: NoiseModel, x: float, draws: int,
                       seed: int) -> np.ndarray:
    """``draws`` independent one-step moves from ``x``."""
    center = np.full(draws, float(system(np.array([x]))[0]))
    return noise.sample(center, make_rng(seed))


def histogram_counts(samples: np.ndarray, num_atoms: int) -> np.ndarray:
    idx = np.minimum((np.mod(samples, 1.0) * num_atoms).astype(np.int64), num_atoms - 1)
    return np.bincount(idx, minlength=num_atoms)


def density_from_counts(counts: np.ndarray) -> GridDensity:
    """Normalised histogram with the multinomial 95% half-width per atom."""
    total = counts.sum()
    p = counts / total
    return GridDensity(p, _Z95 * np.sqrt(p * (1.0 - p) / total))


def empirical_density(trajectories, num_atoms: int, burn_in: int | None = None) -> GridDensity:
    """Histogram of the post-burn-in states of one or more trajectories.

    ``burn_in=None`` uses each trajectory's own ``burn_in``.

    Raises
    ------
    InsufficientSamples
        Fewer than ``10 * num_atoms`` states remain.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    counts = np.zeros(num_atoms, dtype=np.int64)
    for tr in trajectories:
        b = tr.burn_in if burn_in is None else burn_in
        counts += histogram_counts(tr.states[b:], num_atoms)
    if counts.sum() < 10 * num_atoms:
        raise InsufficientSamples(f"{counts.sum()} samples for {num_atoms} atoms")
    return density_from_counts(counts)


def batch_means_band(trajectory: Trajectory, num_atoms: int, batches: int = 20,
                     z: float = 3.0) -> tuple[GridDensity, float]:
    """Histogram of a correlated run with a total-variation error band.

    The kept states are split into ``batches`` contiguous batches; the
    spread of the batch histograms gives a per-atom standard error that
    accounts for autocorrelation. The band is ``z/2`` times the sum of those
    standard errors.
    """
    kept = trajectory.kept
    size = kept.shape[0] // batches
    if size * batches < 10 * num_atoms:
        raise InsufficientSamples(f"{kept.shape[0]} samples for {num_atoms} atoms")
    per = np.stack([histogram_counts(kept[b * size:(b + 1) * size], num_atoms) / size
                    for b in range(batches)])
    se = per.std(axis=0, ddof=1) / math.sqrt(batches)
    dens = density_from_counts(histogram_counts(kept[:size * batches], num_atoms))
    return dens, 0.5 * z * float(se.sum())


def estimate_basin(system: MapSpec, noise: NoiseModel, x0: float,
                   components: DecompositionResult, steps: int, seed: int):
    """Component index that holds the tail of a trajectory from ``x0``.

    The tail is the last 20% of the states. A component holds it when its
    atom union, grown by the cover margin, contains at least 99% of the tail
    states. Returns :data:`ESCAPED` when no component does.
    """
    if components.status != DECOMPOSED:
        raise ValueError("estimate_basin needs a decomposed result")
    states = simulate(system, noise, x0, steps, seed).states
    tail = states[-max(1, steps // 5):]
    cover = components.cover
    best, best_frac = ESCAPED, 0.0
    for k, comp in enumerate(components.components):
        frac = float(cover.contains(comp, tail, cover.delta).mean())
        if frac >= 0.99 and frac > best_frac:
            best, best_frac = k, frac
    return best
