"""Ergodic decomposition on finite covers of the circle.

A cover is a family of overlapping open arcs. The inner iteration maps an
atom to the atoms certified to lie within ``delta`` of every point of its
image; the outer iteration maps it to every atom that may meet the
``delta``-neighbourhood of the image. Inner-periodic atoms with disjoint
inner orbits identify the ergodic components, and disjoint outer orbits
certify that the components do not communicate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import DimensionMismatch, MeshTooCoarse
from .mapdsl import MapSpec, torus_distance
from .noise import UNIFORM, NoiseModel

INNER = "inner"
OUTER = "outer"
DECOMPOSED = "Decomposed"
UNDECIDED = "UndecidedAtMaxResolution"

# safety margin absorbing float rounding in the geometric tests
_MARGIN = 1e-12
_PIECES = 4


@dataclass(frozen=True, eq=False)
class Cover:
    """Regular cover of the circle by ``n`` open arcs of diameter ``mesh``.

    Arc ``k`` is centred at ``(k + 1/2) / n``.
    """

    num_atoms: int
    mesh: float
    delta: float

    def __post_init__(self):
        if self.mesh * self.num_atoms <= 1.0:
            raise ValueError("arcs of this diameter do not cover the circle")

    @property
    def step(self) -> float:
        return 1.0 / self.num_atoms

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.num_atoms) + 0.5) / self.num_atoms

    @property
    def lo(self) -> np.ndarray:
        return self.centers - 0.5 * self.mesh

    @property
    def hi(self) -> np.ndarray:
        return self.centers + 0.5 * self.mesh

    @property
    def shrunken_length(self) -> float:
        """Length of an atom minus the union of all other atoms."""
        return max(0.0, 2.0 * self.step - self.mesh)

    def intervals(self, atoms=None) -> list[tuple[float, float]]:
        idx = range(self.num_atoms) if atoms is None else atoms
        return [(float(self.lo[k]), float(self.hi[k])) for k in idx]

    def contains(self, atoms, x, fatten: float = 0.0) -> np.ndarray:
        """Whether points ``x`` lie in the union of ``atoms`` grown by ``fatten``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        c = self.centers[np.asarray(list(atoms), dtype=int)]
        if c.size == 0:
            return np.zeros(x.shape, dtype=bool)
        d = torus_distance(x[:, None], c[None, :])
        return np.any(d < 0.5 * self.mesh + fatten, axis=1)

    def refine(self) -> "Cover":
        """Halve the mesh, keeping the overlap fraction."""
        return Cover(2 * self.num_atoms, 0.5 * self.mesh, self.delta)


def build_cover(mesh: float, delta: float, overlap: float = 0.5,
                system: MapSpec | None = None) -> Cover:
    """Cover by arcs of diameter ``mesh``; neighbours overlap by ``overlap * mesh``.

    When ``system`` is given, the cover is validated: every atom must have a
    nonempty inner image.

    Raises
    ------
    MeshTooCoarse
        Some atom has an empty inner image.
    """
    if mesh <= 0 or delta <= 0:
        raise ValueError("mesh and delta must be positive")
    if not (0.0 < overlap < 1.0):
        raise ValueError("overlap must lie in (0, 1)")
    n = max(2, math.ceil(1.0 / (mesh * (1.0 - overlap)) - 1e-9))
    cover = Cover(n, min(float(mesh), 1.0), float(delta))
    if system is not None:
        graph = iteration_graph(system, cover, INNER)
        empty = np.flatnonzero(np.diff(graph.adjacency.indptr) == 0)
        if empty.size:
            raise MeshTooCoarse(
                f"{empty.size} of {n} atoms have an empty inner image at mesh {mesh:g}")
    return cover


@dataclass(frozen=True, eq=False)
class IterationGraph:
    """Successor sets of the inner or outer iteration as a sparse boolean matrix."""

    kind: str
    adjacency: sparse.csr_matrix

    @property
    def num_atoms(self) -> int:
        return self.adjacency.shape[0]

    def successors(self, atom: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[atom]:a.indptr[atom + 1]]

    def image(self, atoms) -> set[int]:
        out: set[int] = set()
        for a in atoms:
            out.update(self.successors(int(a)).tolist())
        return out

    def orbit(self, atom: int) -> np.ndarray:
        """All atoms reachable in zero or more steps, sorted."""
        order = breadth_first_order(self.adjacency, atom, directed=True,
                                    return_predecessors=False)
        return np.sort(order)

    def to_dot(self, name: str | None = None) -> str:
        lines = [f"digraph {name or self.kind} {{"]
        a = self.adjacency.tocoo()
        for i, j in zip(a.row, a.col):
            lines.append(f"  {i} -> {j};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _image_enclosures(system: MapSpec, cover: Cover):
    if system.dim != 1:
        raise DimensionMismatch("cover decomposition is implemented for dim=1")
    enc = system.image_enclosure(cover.lo, cover.hi, pieces=_PIECES)
    return enc.mid, 0.5 * enc.width


def _edge_mask(kind: str, cover: Cover, mid: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Boolean successor matrix for a block of source atoms."""
    d = torus_distance(mid[:, None], cover.centers[None, :])
    r = 0.5 * cover.mesh
    if kind == INNER:
        # every point of the target arc is within delta of every image point
        ok = d + r + half[:, None] + _MARGIN <= cover.delta
        return ok & (half[:, None] + r < 0.5)
    # the target arc may meet the open delta-neighbourhood of the image
    return (d - half[:, None] < r + cover.delta + _MARGIN) | (half[:, None] >= 0.5)


def iteration_graph(system: MapSpec, cover: Cover, kind: str) -> IterationGraph:
    """Build the inner (``kind="inner"``) or outer iteration graph."""
    mid, half = _image_enclosures(system, cover)
    n = cover.num_atoms
    rows = []
    chunk = max(1, 2**22 // n)
    for s in range(0, n, chunk):
        rows.append(sparse.csr_matrix(_edge_mask(kind, cover, mid[s:s + chunk], half[s:s + chunk])))
    adj = sparse.vstack(rows, format="csr")
    adj.sort_indices()
    return IterationGraph(kind, adj)


def _check(noise: NoiseModel, cover: Cover):
    if noise.kind != UNIFORM:
        raise ValueError("cover iterations are defined for uniform noise")
    if cover.delta > noise.epsilon:
        raise ValueError("cover delta must not exceed the noise radius")


def inner_map(system: MapSpec, noise: NoiseModel, cover: Cover, atoms) -> set[int]:
    """Atoms certified to lie within ``delta`` of every image point of ``atoms``."""
    _check(noise, cover)
    atoms = sorted(set(int(a) for a in atoms))
    if not atoms:
        return set()
    mid, half = _image_enclosures(system, cover)
    mask = _edge_mask(INNER, cover, mid[atoms], half[atoms])
    return set(np.flatnonzero(mask.any(axis=0)).tolist())


def outer_map(system: MapSpec, noise: NoiseModel, cover: Cover, atoms) -> set[int]:
    """Atoms that may meet the ``delta``-neighbourhood of the image of ``atoms``."""
    _check(noise, cover)
    atoms = sorted(set(int(a) for a in atoms))
    if not atoms:
        return set()
    mid, half = _image_enclosures(system, cover)
    mask = _edge_mask(OUTER, cover, mid[atoms], half[atoms])
    return set(np.flatnonzero(mask.any(axis=0)).tolist())


def inner_periodic_atoms(graph: IterationGraph) -> set[int]:
    """Atoms lying on a directed cycle of the inner graph."""
    if graph.kind != INNER:
        raise ValueError("inner-periodic atoms are defined on the inner graph")
    _, labels = connected_components(graph.adjacency, directed=True, connection="strong")
    sizes = np.bincount(labels)
    self_loop = graph.adjacency.diagonal().astype(bool)
    periodic = (sizes[labels] > 1) | self_loop
    return set(np.flatnonzero(periodic).tolist())


def inner_reduction(graph: IterationGraph, periodic) -> set[int]:
    """Reduce the periodic atoms to representatives with disjoint inner orbits.

    While two representatives have intersecting orbits, both are replaced
    by an inner-periodic atom whose orbit lies in the intersection. The
    replacement is the periodic atom of smallest orbit inside the
    intersection (lowest index on ties), which always exists because the
    orbit of any atom in the intersection is finite and forward closed.
    """
    periodic = sorted(set(int(p) for p in periodic))
    orbits = {p: set(graph.orbit(p).tolist()) for p in periodic}
    pset = set(periodic)
    irr = list(periodic)
    changed = True
    while changed:
        changed = False
        for x in range(len(irr)):
            for y in range(x + 1, len(irr)):
                a, b = irr[x], irr[y]
                common = orbits[a] & orbits[b]
                if not common:
                    continue
                cands = [p for p in common if p in pset]
                k = min(cands, key=lambda p: (len(orbits[p]), p))
                irr = [q for q in irr if q not in (a, b)]
                if k not in irr:
                    irr.append(k)
                irr.sort()
                changed = True
                break
            if changed:
                break
    return set(irr)


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    """Outcome of :func:`decompose`.

    Attributes
    ----------
    status : {"Decomposed", "UndecidedAtMaxResolution"}
    components : list of ndarray
        Outer orbits of the representatives, as sorted atom indices.
    xi_irr : list of int
        One inner-periodic representative per component.
    refinements_used : int
    cover : Cover or None
        The cover of the last level examined.
    diagnostics : dict
    """

    status: str
    components: list
    xi_irr: list
    refinements_used: int
    cover: Cover | None
    inner: IterationGraph | None = None
    outer: IterationGraph | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_components(self) -> int:
        return len(self.components)

    def component_of(self, x: float, fatten: float = 0.0) -> list[int]:
        """Indices of the components whose atom union contains ``x``."""
        return [k for k, comp in enumerate(self.components)
                if self.cover.contains(comp, x, fatten)[0]]

    def component_arcs(self, k: int) -> list[tuple[float, float]]:
        """Merge the atoms of component ``k`` into disjoint arcs (lift coordinates)."""
        return merge_arcs(self.cover.intervals(self.components[k]))

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "num_components": self.num_components,
            "components": [[list(iv) for iv in self.component_arcs(k)]
                           for k in range(self.num_components)],
            "xi_irr": [int(a) for a in self.xi_irr],
            "refinements_used": self.refinements_used,
            "mesh": None if self.cover is None else self.cover.mesh,
            "delta": None if self.cover is None else self.cover.delta,
            "num_atoms": None if self.cover is None else self.cover.num_atoms,
            "diagnostics": self.diagnostics,
        }


def merge_arcs(intervals) -> list[tuple[float, float]]:
    """Union of arcs given as ``(lo, hi)`` lift intervals, returned sorted in [0, 1)."""
    pieces = []
    for lo, hi in intervals:
        if hi - lo >= 1.0:
            return [(0.0, 1.0)]
        lo_m = lo % 1.0
        hi_m = lo_m + (hi - lo)
        if hi_m > 1.0:
            pieces += [(lo_m, 1.0), (0.0, hi_m - 1.0)]
        else:
            pieces.append((lo_m, hi_m))
    pieces.sort()
    out: list[list[float]] = []
    for lo, hi in pieces:
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    # join the arc through 0 when both ends touch
    if len(out) > 1 and out[0][0] <= 0.0 and out[-1][1] >= 1.0:
        first = out.pop(0)
        out[-1][1] = 1.0 + first[1]
    return [(float(a), float(b)) for a, b in out]


def _decompose_level(system: MapSpec, cover: Cover):
    inner = iteration_graph(system, cover, INNER)
    empty = np.flatnonzero(np.diff(inner.adjacency.indptr) == 0)
    if empty.size:
        raise MeshTooCoarse(f"{empty.size} atoms have an empty inner image at mesh {cover.mesh:g}")
    periodic = inner_periodic_atoms(inner)
    irr = sorted(inner_reduction(inner, periodic))
    outer = iteration_graph(system, cover, OUTER)
    comps = [outer.orbit(a) for a in irr]
    disjoint = True
    for x in range(len(comps)):
        for y in range(x + 1, len(comps)):
            if np.intersect1d(comps[x], comps[y]).size:
                disjoint = False
    return inner, outer, irr, comps, disjoint, len(periodic)


def decompose(system: MapSpec, noise: NoiseModel, initial_mesh: float = 0.1,
              max_refinements: int = 10, overlap: float = 0.5) -> DecompositionResult:
    """Find the ergodic components of the noisy system.

    The cover margin is ``delta = epsilon``. At each level the mesh is
    halved until the outer orbits of the representatives are pairwise
    disjoint. Levels whose mesh is too coarse for nonempty inner images are
    refined as well. If the budget runs out the status is
    ``UndecidedAtMaxResolution``.
    """
    if noise.kind != UNIFORM:
        raise ValueError("decompose requires uniform noise")
    cover = build_cover(initial_mesh, noise.epsilon, overlap)
    history = []
    for level in range(max_refinements + 1):
        try:
            inner, outer, irr, comps, disjoint, n_periodic = _decompose_level(system, cover)
        except MeshTooCoarse as exc:
            history.append({"mesh": cover.mesh, "outcome": "mesh_too_coarse", "detail": str(exc)})
        else:
            history.append({"mesh": cover.mesh, "outcome": "disjoint" if disjoint else "overlapping",
                            "periodic": n_periodic, "xi_irr": len(irr)})
            if disjoint:
                return DecompositionResult(DECOMPOSED, comps, irr, level, cover, inner, outer,
                                           {"levels": history})
        if level < max_refinements:
            cover = cover.refine()
    hint = "refinement budget exhausted; try a slightly different epsilon or a larger budget"
    return DecompositionResult(UNDECIDED, [], [], max_refinements, cover, None, None,
                               {"levels": history, "hint": hint})
