"""Cycle geometry and the discretized state space.

A cycle is a closed lattice loop through the origin whose increments generate
the integer lattice.  The state space at scale N consists of the grid points
of the domain box that are visited by at least one translated copy of a cycle
scaled by 1/N.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sympy import Matrix, ZZ
from sympy.matrices.normalforms import smith_normal_form

__all__ = [
    "Cycle",
    "CycleDiagnostics",
    "LatticeDomain",
    "validate_cycle",
    "discretize",
    "nearest_lattice_point",
    "metastable_sets",
]

_COORD_TOL = 1e-9


@dataclass(frozen=True)
class Cycle:
    """Closed lattice loop (z_0, ..., z_L) with z_L = z_0 = origin."""

    vertices: tuple  # tuple of integer coordinate tuples, first == last == 0

    def __post_init__(self):
        verts = tuple(tuple(int(c) for c in v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)

    @property
    def dim(self) -> int:
        return len(self.vertices[0])

    @property
    def length(self) -> int:
        return len(self.vertices) - 1

    @property
    def points(self) -> np.ndarray:
        """The L distinct vertices z_0..z_{L-1} as an (L, d) integer array."""
        return np.array(self.vertices[:-1], dtype=np.int64)

    @property
    def increments(self) -> np.ndarray:
        """w_j = z_{j+1} - z_j, shape (L, d)."""
        v = np.array(self.vertices, dtype=np.int64)
        return v[1:] - v[:-1]

    @property
    def center(self) -> np.ndarray:
        """Mean of the L distinct vertices."""
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class CycleDiagnostics:
    ok: bool
    failures: tuple


def validate_cycle(c: Cycle) -> CycleDiagnostics:
    """Check the structural requirements of a cycle.

    Returns diagnostics naming each failed requirement; never raises.
    """
    failures = []
    if c.length < 2:
        failures.append("length must be at least 2")
        return CycleDiagnostics(False, tuple(failures))
    if c.vertices[0] != c.vertices[-1]:
        failures.append("cycle is not closed (first vertex != last vertex)")
    if any(v != 0 for v in c.vertices[0]):
        failures.append("cycle must start at the origin")
    pts = c.vertices[:-1]
    if len(set(pts)) != len(pts):
        failures.append("cycle is self-intersecting")
    incs = c.increments
    if not np.all(incs.sum(axis=0) == 0):
        failures.append("increments do not sum to zero")
    # increments must generate the full integer lattice: the Smith normal
    # form of the increment matrix has all elementary divisors equal to 1
    m = Matrix(incs.T.tolist())
    snf = smith_normal_form(m, domain=ZZ)
    divisors = [abs(snf[i, i]) for i in range(min(snf.shape))]
    if len(divisors) < c.dim or any(d != 1 for d in divisors[: c.dim]):
        failures.append(
            f"increments generate a proper sublattice (elementary divisors {divisors})"
        )
    return CycleDiagnostics(not failures, tuple(failures))


class LatticeDomain:
    """Discretization of the domain at scale N induced by a family of cycles.

    States are stored as integer coordinate tuples; the physical point of a
    state is its integer vector divided by N.  ``interiors[k]`` lists the
    states whose translated copy of cycle k lies entirely in the grid, and
    ``translate_members[k]`` gives, for each such translate, the state indices
    of its L cycle vertices in order.
    """

    def __init__(self, N: int, cycles: Sequence[Cycle], field,
                 states: np.ndarray, index: dict, grid_size: int,
                 interiors: list, translate_members: list):
        self.N = int(N)
        self.cycles = list(cycles)
        self.field = field
        self.states = states  # (n, d) int64, lexicographically sorted
        self.index = index  # tuple -> dense index
        self.grid_size = grid_size  # |full grid|
        self.interiors = interiors  # per cycle: int array of state indices
        self.translate_members = translate_members  # per cycle: (n_k, L) int
        self._adjacency = None

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def coords(self, idx=None) -> np.ndarray:
        """Physical coordinates (state integer vectors divided by N)."""
        if idx is None:
            return self.states / self.N
        return self.states[idx] / self.N

    def adjacency(self) -> list:
        """Per-state list of neighbor state indices along cycle edges
        (either orientation)."""
        if self._adjacency is None:
            nbr = [set() for _ in range(self.n_states)]
            for k, cyc in enumerate(self.cycles):
                members = self.translate_members[k]
                L = cyc.length
                for j in range(L):
                    a = members[:, j]
                    b = members[:, (j + 1) % L]
                    for u, v in zip(a, b):
                        nbr[u].add(int(v))
                        nbr[v].add(int(u))
            self._adjacency = [sorted(s) for s in nbr]
        return self._adjacency


def discretize(field, N: int, cycles: Sequence[Cycle]) -> LatticeDomain:
    """Build the discretized state space at scale N.

    The grid is the set of points of (Z/N)^d inside the domain; a state
    belongs to the state space iff it is visited by a translated cycle whose
    vertices all lie in the grid.
    """
    if N < 4:
        raise ValueError("N must be at least 4")
    for c in cycles:
        diag = validate_cycle(c)
        if not diag.ok:
            raise ValueError(f"invalid cycle {c.vertices}: {diag.failures}")
        if c.dim != field.dim:
            raise ValueError("cycle dimension does not match field dimension")

    d = field.dim
    ranges = []
    for lo, hi in field.box:
        ranges.append(range(int(np.ceil(lo * N - _COORD_TOL)),
                            int(np.floor(hi * N + _COORD_TOL)) + 1))
    grid = set()
    for ituple in itertools.product(*ranges):
        if field.member is not None:
            x = np.array(ituple, dtype=float) / N
            if not field.member(x):
                continue
        grid.add(ituple)
    if not grid:
        raise ValueError("empty grid: domain too small for this N")

    interior_pts = []  # per cycle: list of base-point integer tuples
    state_set = set()
    for c in cycles:
        pts = c.points  # (L, d)
        base = []
        for g in grid:
            gv = np.array(g, dtype=np.int64)
            verts = [tuple(gv + pts[j]) for j in range(c.length)]
            if all(v in grid for v in verts):
                base.append(g)
                state_set.update(verts)
        interior_pts.append(base)
    if all(len(b) == 0 for b in interior_pts):
        raise ValueError(
            "no translated cycle fits in the domain at this N (domain too small)"
        )

    states = np.array(sorted(state_set), dtype=np.int64).reshape(-1, d)
    index = {tuple(s): i for i, s in enumerate(states.tolist())}

    interiors = []
    translate_members = []
    for c, base in zip(cycles, interior_pts):
        base_sorted = sorted(base)
        pts = c.points
        idx = np.array([index[b] for b in base_sorted], dtype=np.int64)
        members = np.empty((len(base_sorted), c.length), dtype=np.int64)
        for r, b in enumerate(base_sorted):
            bv = np.array(b, dtype=np.int64)
            for j in range(c.length):
                members[r, j] = index[tuple(bv + pts[j])]
        interiors.append(idx)
        translate_members.append(members)

    return LatticeDomain(N, cycles, field, states, index, len(grid),
                         interiors, translate_members)


def nearest_lattice_point(x, lat: LatticeDomain) -> int:
    """Index of the state closest to x; ties broken lexicographically."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d2 = np.sum((lat.states / lat.N - x) ** 2, axis=1)
    best = np.min(d2)
    ties = np.nonzero(d2 <= best + _COORD_TOL / lat.N ** 2)[0]
    return int(ties[0])  # states sorted lexicographically


def metastable_sets(lat: LatticeDomain, ls) -> list:
    """Per-well state-index arrays of the deepened wells.

    A state belongs to well i's metastable set iff its potential value is at
    most H - epsilon and it lies in the lattice connected component (along
    cycle edges) containing well i's minima.
    """
    level = ls.H - ls.epsilon
    f_vals = np.array([ls.field.f(x) for x in lat.coords()])
    low = f_vals <= level + 1e-12
    adj = lat.adjacency()
    label = -np.ones(lat.n_states, dtype=np.int64)
    comp = 0
    for s in range(lat.n_states):
        if not low[s] or label[s] >= 0:
            continue
        stack = [s]
        label[s] = comp
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if low[v] and label[v] < 0:
                    label[v] = comp
                    stack.append(v)
        comp += 1
    sets = []
    for w in range(ls.n_wells):
        m_idx = nearest_lattice_point(ls.m[w], lat)
        c = label[m_idx]
        if c < 0:
            raise ValueError(
                f"designated minimum of well {w} is not below level H - epsilon"
            )
        members = np.nonzero(label == c)[0]
        # guard: the component must not contain another well's minimum
        for w2 in range(ls.n_wells):
            if w2 != w and label[nearest_lattice_point(ls.m[w2], lat)] == c:
                raise ValueError(
                    f"wells {w} and {w2} merge at level H - epsilon on the lattice"
                )
        sets.append(members)
    return sets
