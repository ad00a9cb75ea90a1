"""Flow algebra on the edge set of a chain and constructive flow tools.

A flow is an antisymmetric function on the edges where the symmetrized
conductance is positive.  Flows are stored as vectors over a canonical
edge enumeration (one orientation per unordered pair).  All conductances
are in the chain's shifted units.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from cyclewalk.chain import FiniteChain, Generator

__all__ = [
    "EdgeSpace",
    "Flow",
    "GoodPath",
    "field_flows",
    "divergence",
    "flow_norm",
    "flow_inner",
    "cycle_flow",
    "path_flow",
    "transfer_divergence",
    "saddle_test_flow",
    "dirichlet_value",
    "thomson_value",
    "dirichlet_optimizers",
    "thomson_optimizers",
    "collapse_flow",
]

_DIV_TOL = 1e-10


class EdgeSpace:
    """Canonical enumeration of the unordered edges with positive symmetrized
    conductance, together with the per-edge directed conductances."""

    def __init__(self, chain: FiniteChain):
        self.chain = chain
        C = chain.conductance().tocsr()
        CS = chain.sym_conductance().tocoo()
        mask = (CS.row < CS.col) & (CS.data > 0.0)
        self.ei = CS.row[mask].astype(np.int64)
        self.ej = CS.col[mask].astype(np.int64)
        self.cs = CS.data[mask]
        self.m = len(self.cs)
        self.cij = np.asarray(C[self.ei, self.ej]).ravel()
        self.cji = np.asarray(C[self.ej, self.ei]).ravel()
        self.index = {(int(a), int(b)): e
                      for e, (a, b) in enumerate(zip(self.ei, self.ej))}
        rows = np.concatenate([self.ei, self.ej])
        cols = np.concatenate([np.arange(self.m), np.arange(self.m)])
        data = np.concatenate([np.ones(self.m), -np.ones(self.m)])
        self.incidence = sparse.csr_matrix(
            (data, (rows, cols)), shape=(chain.n, self.m))
        self._nbr = None

    def edge(self, u: int, v: int):
        """(edge id, orientation sign) for the ordered pair (u, v)."""
        e = self.index.get((u, v))
        if e is not None:
            return e, 1.0
        e = self.index.get((v, u))
        if e is not None:
            return e, -1.0
        raise KeyError(f"({u}, {v}) is not an edge of the chain")

    def neighbors(self) -> list:
        if self._nbr is None:
            nbr = [[] for _ in range(self.chain.n)]
            for a, b in zip(self.ei, self.ej):
                nbr[int(a)].append(int(b))
                nbr[int(b)].append(int(a))
            self._nbr = nbr
        return self._nbr


def edge_space(chain: FiniteChain) -> EdgeSpace:
    if chain._edge_space is None:
        chain._edge_space = EdgeSpace(chain)
    return chain._edge_space


class Flow:
    """Antisymmetric edge function, stored on the canonical orientation."""

    def __init__(self, es: EdgeSpace, vec: Optional[np.ndarray] = None):
        self.es = es
        self.vec = np.zeros(es.m) if vec is None else np.asarray(vec, float)

    def copy(self) -> "Flow":
        return Flow(self.es, self.vec.copy())

    def value(self, u: int, v: int) -> float:
        e, s = self.es.edge(u, v)
        return s * self.vec[e]

    def add_edge(self, u: int, v: int, val: float) -> None:
        e, s = self.es.edge(u, v)
        self.vec[e] += s * val

    def __add__(self, other: "Flow") -> "Flow":
        return Flow(self.es, self.vec + other.vec)

    def __sub__(self, other: "Flow") -> "Flow":
        return Flow(self.es, self.vec - other.vec)

    def scaled(self, a: float) -> "Flow":
        return Flow(self.es, a * self.vec)

    def div(self) -> np.ndarray:
        """Divergence at every state (signed outflow)."""
        return self.es.incidence @ self.vec

    def norm2(self) -> float:
        return float(np.sum(self.vec ** 2 / self.es.cs))

    def inner(self, other: "Flow") -> float:
        return float(np.sum(self.vec * other.vec / self.es.cs))


def divergence(phi: Flow, where=None):
    d = phi.div()
    if where is None:
        return d
    if np.isscalar(where):
        return float(d[int(where)])
    return float(d[np.asarray(list(where), dtype=np.int64)].sum())


def flow_norm(phi: Flow) -> float:
    return math.sqrt(phi.norm2())


def flow_inner(phi: Flow, psi: Flow) -> float:
    return phi.inner(psi)


def field_flows(chain: FiniteChain, f: np.ndarray):
    """The three flows generated by a state function f.

    Phi_f(x,y) = f(x)c(x,y) - f(y)c(y,x);
    Phi*_f(x,y) = f(x)c(y,x) - f(y)c(x,y);
    Psi_f(x,y) = c^s(x,y)(f(x) - f(y)).
    """
    es = edge_space(chain)
    f = np.asarray(f, dtype=float)
    fi, fj = f[es.ei], f[es.ej]
    phi = Flow(es, fi * es.cij - fj * es.cji)
    phi_star = Flow(es, fi * es.cji - fj * es.cij)
    psi = Flow(es, es.cs * (fi - fj))
    return phi, phi_star, psi


def _interior_position(g: Generator, k: int, z: int) -> int:
    if not hasattr(g, "_int_pos"):
        g._int_pos = [
            {int(s): p for p, s in enumerate(g.lat.interiors[kk])}
            for kk in range(len(g.lat.cycles))
        ]
    pos = g._int_pos[k].get(int(z))
    if pos is None:
        raise ValueError(f"state {z} is not an interior point of cycle {k}")
    return pos


def cycle_flow(g: Generator, f: np.ndarray, z: int, star: bool = True,
               cycle_index: int = 0) -> Flow:
    """Flow supported on the translated cycle based at interior state z.

    With star=True this is Phi*_{f,z}; otherwise Phi_{f,z}.  Both use only
    the single translate's conductance.
    """
    es = edge_space(g)
    pos = _interior_position(g, cycle_index, z)
    members = g.lat.translate_members[cycle_index][pos]
    kz = math.exp(g.logk[cycle_index][pos])
    L = len(members)
    out = Flow(es)
    for j in range(L):
        u, v = int(members[j]), int(members[(j + 1) % L])
        if star:
            out.add_edge(u, v, -f[v] * kz)
        else:
            out.add_edge(u, v, f[u] * kz)
    return out


def path_flow(es: EdgeSpace, path: Sequence[int], r: float) -> Flow:
    """Flow of strength r along a state path (+r on each oriented edge)."""
    out = Flow(es)
    for u, v in zip(path[:-1], path[1:]):
        out.add_edge(int(u), int(v), r)
    return out


@dataclass
class GoodPath:
    """Lattice path along which the finite-size potential stays within
    slack/N of its starting value."""

    states: list
    slack: float = dc_field(default=float("nan"))

    def validate(self, g: Generator) -> None:
        es = edge_space(g)
        seen = set()
        for s in self.states:
            if s in seen:
                raise ValueError(f"good path revisits state {s}")
            seen.add(s)
        for u, v in zip(self.states[:-1], self.states[1:]):
            try:
                es.edge(int(u), int(v))
            except KeyError:
                raise ValueError(
                    f"good path uses a non-edge ({u}, {v}) (connectivity violated)"
                )
        fn = -(g.logw + g.shift) / g.lat.N
        vals = fn[np.asarray(self.states, dtype=np.int64)]
        self.slack = float(g.lat.N * (vals.max() - vals[0]))


def transfer_divergence(g: Generator, phi: Flow, A, B, paths: dict) -> Flow:
    """Path flow cancelling phi's divergence on A by moving it into B.

    ``paths`` maps each A-state with nonzero divergence to a good path from
    that state into B.  Returns the correcting flow chi; phi + chi is
    divergence-free on A and off A union B.
    """
    es = phi.es
    d = phi.div()
    A = [int(a) for a in A]
    Bset = {int(b) for b in B}
    chi = Flow(es)
    slacks = []
    for a in A:
        if d[a] == 0.0:
            continue
        if a not in paths:
            raise ValueError(f"no good path supplied for source state {a}")
        p = paths[a]
        if int(p.states[0]) != a:
            raise ValueError(f"path for state {a} starts elsewhere")
        if int(p.states[-1]) not in Bset:
            raise ValueError(f"path for state {a} does not end in B")
        p.validate(g)
        slacks.append(p.slack)
        chi = chi + path_flow(es, p.states, -float(d[a]))
    chi.max_slack = max(slacks) if slacks else 0.0
    return chi


# ---------------------------------------------------------------------------
# Path construction on the lattice graph
# ---------------------------------------------------------------------------

def _dedupe_path(path: list) -> list:
    """Cut loops so the path never revisits a state."""
    out, seen = [], {}
    for s in path:
        if s in seen:
            del out[seen[s] + 1:]
            for k in list(seen):
                if seen[k] > seen[s]:
                    del seen[k]
        else:
            seen[s] = len(out)
            out.append(s)
    return out


def _minimax_tree(es: EdgeSpace, height: np.ndarray, root: int):
    """Parent pointers of paths minimizing the maximum height to ``root``."""
    n = es.chain.n
    nbr = es.neighbors()
    best = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    best[root] = height[root]
    heap = [(best[root], root)]
    while heap:
        c, u = heapq.heappop(heap)
        if c > best[u]:
            continue
        for v in nbr[u]:
            nc = max(c, height[v])
            if nc < best[v]:
                best[v] = nc
                parent[v] = u
                heapq.heappush(heap, (nc, v))
    return parent, best


def _follow(parent: np.ndarray, start: int) -> list:
    path = [start]
    while parent[path[-1]] >= 0:
        path.append(int(parent[path[-1]]))
    return path


def _axis_leg(g: Generator, es: EdgeSpace, start: int, u1: np.ndarray,
              sigma: np.ndarray, side: float, eps: float) -> list:
    """Snap the line through ``start`` in direction side*u1 to lattice edges,
    walking until the projection leaves the eps window.  Ties broken toward
    smaller potential."""
    fn = -(g.logw + g.shift) / g.lat.N
    coords = g.lat.coords()
    proj = (coords - sigma) @ u1
    nbr = es.neighbors()
    path = [start]
    cur = start
    while side * proj[cur] <= eps:
        cand = [v for v in nbr[cur] if side * proj[v] > side * proj[cur] + 1e-15]
        if not cand:
            break
        gain = np.array([side * proj[v] for v in cand])
        best = gain.max()
        tied = [v for v, gv in zip(cand, gain) if gv >= best - 1e-15]
        nxt = min(tied, key=lambda v: fn[v])
        path.append(nxt)
        cur = nxt
    return path


def saddle_test_flow(g: Generator, sa, boxes, targets):
    """The constructive near-optimal flow through a saddle, plus its exactly
    corrected version.

    Builds Phi from the Gaussian-CDF potential approximation summed over the
    cycle translates meeting the saddle box, transports all of its divergence
    along good paths to the two designated minima, and adds a path-flow
    correction so the corrected flow has divergence exactly +-(capacity scale
    x saddle weight) at the minima and zero elsewhere.

    ``targets`` are the state indices of the two minima, ordered to match the
    box's side-1/side-2 orientation.  Returns (Phi, Phi_corrected, report).
    """
    es = edge_space(g)
    N = g.lat.N
    d = g.lat.dim
    coords = g.lat.coords()
    sigma = sa.location
    vn = sa.vn(coords, N)

    # flow from the local potential approximation, over translates near the box
    phi = Flow(es)
    for k, cyc in enumerate(g.lat.cycles):
        sel = boxes.core.get(k)
        if sel is None or not np.any(sel):
            continue
        members = g.lat.translate_members[k][sel]
        kz = np.exp(g.logk[k][sel])
        L = cyc.length
        for j in range(L):
            u = members[:, j]
            v = members[:, (j + 1) % L]
            vals = -vn[v] * kz
            for uu, vv, val in zip(u, v, vals):
                e, s = es.edge(int(uu), int(vv))
                phi.vec[e] += s * val

    log_kappa = (d / 2.0 - 1.0) * math.log(2.0 * math.pi * N) \
        - N * sa.value - g.shift
    kappa = math.exp(log_kappa)
    komega = kappa * sa.omega

    div0 = phi.div()
    t1, t2 = int(targets[0]), int(targets[1])
    fn = -(g.logw + g.shift) / N
    parent1, _ = _minimax_tree(es, fn, t1)
    parent2, _ = _minimax_tree(es, fn, t2)

    phit = phi.copy()
    slacks = []
    proj = (coords - sigma) @ sa.u1
    sources = np.nonzero(div0)[0]
    for x in sources:
        x = int(x)
        if x in (t1, t2):
            continue
        sgn = 1.0 if proj[x] >= 0 else -1.0
        target_parent = parent1 if sgn == boxes.side1_sign else parent2
        leg = _axis_leg(g, es, x, sa.u1, sigma, sgn, boxes.eps)
        tail = _follow(target_parent, leg[-1])
        path = _dedupe_path(leg[:-1] + tail)
        gp = GoodPath(path)
        gp.validate(g)
        slacks.append(gp.slack)
        chi = path_flow(es, path, -float(div0[x]))
        phit.vec += chi.vec

    dvt = phit.div()
    d1 = float(dvt[t1])
    target_div = math.copysign(komega, d1 if d1 != 0.0 else 1.0)
    delta = target_div - d1
    bridge = _dedupe_path(_follow(parent2, t1))
    phit.vec += path_flow(es, bridge, delta).vec

    dvf = phit.div()
    interior_idx = np.setdiff1d(boxes.B, np.concatenate(
        [boxes.rim, boxes.side1, boxes.side2]))
    report = {
        "kappa_shifted": kappa,
        "komega_shifted": komega,
        "target_div": target_div,
        "delta_over_komega": delta / komega,
        "div_side1_over_komega": float(div0[boxes.side1].sum()) / komega,
        "div_side2_over_komega": float(div0[boxes.side2].sum()) / komega,
        "div_rim_over_komega": float(div0[boxes.rim].sum()) / komega,
        "interior_abs_div_over_komega":
            float(np.abs(div0[interior_idx]).sum()) / komega,
        "norm_diff_sq_over_kappa": (phit - phi).norm2() / kappa,
        "max_offtarget_div": float(
            np.abs(np.delete(dvf, [t1, t2])).max()) if g.lat.n_states > 2 else 0.0,
        "div_at_targets": (float(dvf[t1]), float(dvf[t2])),
        "max_path_slack": max(slacks) if slacks else 0.0,
        "n_paths": len(slacks),
    }
    return phi, phit, report


# ---------------------------------------------------------------------------
# Variational principles
# ---------------------------------------------------------------------------

def _check_boundary_values(f: np.ndarray, A, B, a: float, b: float) -> None:
    tol = _DIV_TOL
    A = np.asarray(list(A), dtype=np.int64)
    B = np.asarray(list(B), dtype=np.int64)
    if np.max(np.abs(f[A] - a)) > tol:
        bad = int(A[np.argmax(np.abs(f[A] - a))])
        raise ValueError(f"function is not {a} on A (state {bad})")
    if np.max(np.abs(f[B] - b)) > tol:
        bad = int(B[np.argmax(np.abs(f[B] - b))])
        raise ValueError(f"function is not {b} on B (state {bad})")


def _check_flow_class(phi: Flow, A, B, a: float,
                      class_tol: float = _DIV_TOL) -> None:
    """Membership of the class of flows with divergence a on A, -a on B and
    zero elsewhere."""
    d = phi.div()
    scale = max(1.0, float(np.max(np.abs(phi.vec))) if phi.es.m else 1.0)
    tol = class_tol * scale
    mask = np.zeros(len(d), dtype=bool)
    mask[np.asarray(list(A), dtype=np.int64)] = True
    mask[np.asarray(list(B), dtype=np.int64)] = True
    off = np.nonzero(~mask)[0]
    if len(off) and np.max(np.abs(d[off])) > tol:
        bad = int(off[np.argmax(np.abs(d[off]))])
        raise ValueError(f"flow has divergence off A and B (state {bad})")
    da = float(d[np.asarray(list(A), dtype=np.int64)].sum())
    db = float(d[np.asarray(list(B), dtype=np.int64)].sum())
    ascale = max(1.0, abs(a))
    if abs(da - a) > tol * ascale or abs(db + a) > tol * ascale:
        raise ValueError(
            f"flow divergence on A/B is ({da}, {db}), expected ({a}, {-a})")


def dirichlet_value(g: FiniteChain, f: np.ndarray, phi: Flow, A, B,
                    class_tol: float = _DIV_TOL) -> float:
    """Value of the double variational principle at (f, phi).

    Requires f = 1 on A, 0 on B and phi divergence-free with zero net
    divergence on A and B.  The minimum over admissible pairs is the
    capacity (shifted units).  ``class_tol`` relaxes the admissibility check
    for flows assembled from linear solves, whose divergence carries
    solver-conditioning error.
    """
    f = np.asarray(f, dtype=float)
    _check_boundary_values(f, A, B, 1.0, 0.0)
    _check_flow_class(phi, A, B, 0.0, class_tol)
    phif, _, _ = field_flows(g, f)
    return (phif - phi).norm2()


def thomson_value(g: FiniteChain, h: np.ndarray, psi: Flow, A, B,
                  class_tol: float = _DIV_TOL) -> float:
    """Value of the dual variational principle at (h, psi).

    Requires h = 0 on A and B and psi a unit flow from A to B.  The maximum
    over admissible pairs is the capacity (shifted units).  ``class_tol``
    relaxes the admissibility check for solver-assembled flows.
    """
    h = np.asarray(h, dtype=float)
    _check_boundary_values(h, A, B, 0.0, 0.0)
    _check_flow_class(psi, A, B, 1.0, class_tol)
    phih, _, _ = field_flows(g, h)
    return 1.0 / (phih - psi).norm2()


def dirichlet_optimizers(g: FiniteChain, hd):
    """The exact optimizer pair (f0, phi0) built from the equilibrium
    potentials of the chain and its adjoint."""
    f0 = 0.5 * (hd.V + hd.V_star)
    phi_vstar, _, _ = field_flows(g, hd.V_star)
    _, phistar_v, _ = field_flows(g, hd.V)
    phi0 = (phi_vstar - phistar_v).scaled(0.5)
    return f0, phi0


def thomson_optimizers(g: FiniteChain, hd):
    """The exact optimizer pair (g0, psi0) of the dual principle."""
    g0 = (hd.V_star - hd.V) / (2.0 * hd.cap)
    phi_vstar, _, _ = field_flows(g, hd.V_star)
    _, phistar_v, _ = field_flows(g, hd.V)
    psi0 = (phi_vstar + phistar_v).scaled(1.0 / (2.0 * hd.cap))
    return g0, psi0


def collapse_flow(phi: Flow, collapsed) -> Flow:
    """Image of a flow under collapsing a set to a point.

    Edge values between kept states are preserved; values on edges from the
    collapsed set to a kept state are summed onto the collapsed point's edge;
    internal edges vanish.
    """
    es_new = edge_space(collapsed)
    out = Flow(es_new)
    es = phi.es
    for e in range(es.m):
        val = phi.vec[e]
        if val == 0.0:
            continue
        u = collapsed.relabel(int(es.ei[e]))
        v = collapsed.relabel(int(es.ej[e]))
        if u == v:
            continue
        out.add_edge(u, v, val)
    return out
