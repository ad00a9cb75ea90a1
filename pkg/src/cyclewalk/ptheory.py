"""Exact finite-size potential theory by sparse linear solves.

Equilibrium potentials, capacities, harmonic measures, mean hitting times,
the trace of the chain on a subset (as a Schur complement of the rate
matrix), and the chain with a well collapsed to a single point.

Capacities and other measure-weighted quantities are reported in shifted
units: true value = shifted value / total unnormalized weight.  Hitting
times involve only rate ratios and are in true time units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from cyclewalk.chain import FiniteChain

__all__ = [
    "HarmonicData",
    "equilibrium_potential",
    "mean_hitting_time",
    "expected_reward",
    "trace_generator",
    "TraceResult",
    "mean_jump_rates",
    "collapse",
    "CollapsedChain",
    "collapsed_hit_prob",
    "capacity",
    "stable_capacity",
    "stable_hitting_time",
]

_MAX_DENSE_TRACE = 5 * 10 ** 7
_MAX_DENSE_ELIM = 6000


def _as_index_array(s, n: int) -> np.ndarray:
    arr = np.asarray(sorted(set(int(i) for i in s)), dtype=np.int64)
    if len(arr) == 0:
        raise ValueError("empty state set")
    if arr[0] < 0 or arr[-1] >= n:
        raise ValueError("state index out of range")
    return arr


def _solve(Qsub: sparse.spmatrix, rhs: np.ndarray, what: str) -> np.ndarray:
    """Solve the interior system, raising a clear error when singular."""
    Qsub = sparse.csc_matrix(Qsub)
    try:
        lu = spla.splu(Qsub)
        out = lu.solve(rhs)
    except RuntimeError as exc:
        raise ValueError(f"singular interior system while solving {what}: {exc}")
    if not np.all(np.isfinite(out)):
        raise ValueError(
            f"singular interior system while solving {what} "
            "(a component is disconnected from the boundary)"
        )
    return out


@dataclass
class HarmonicData:
    """Equilibrium potential data for a pair of disjoint sets (A, B).

    ``cap`` is in shifted units; the true capacity is cap * exp(log_shift)
    where log_shift = -log(total unnormalized weight).
    """

    A: np.ndarray
    B: np.ndarray
    V: np.ndarray  # P_x[hit A before B]
    V_star: np.ndarray  # same for the time-reversed chain
    cap: float
    cap_ba: float
    cap_star: float
    nu: np.ndarray  # harmonic measure on A (forward chain)
    nu_star: np.ndarray  # harmonic measure on A (reversed chain)
    log_shift: float

    @property
    def log_true_cap(self) -> float:
        return math.log(self.cap) + self.log_shift


def _potential(chain: FiniteChain, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = chain.n
    V = np.zeros(n)
    V[A] = 1.0
    boundary = np.zeros(n, dtype=bool)
    boundary[A] = True
    boundary[B] = True
    interior = np.nonzero(~boundary)[0]
    if len(interior):
        Q = chain.Q.tocsr()
        Qii = Q[interior][:, interior]
        rhs = -(Q[interior][:, A] @ np.ones(len(A)))
        V[interior] = _solve(Qii, rhs, "equilibrium potential")
    return V


def _one_sided_cap(chain: FiniteChain, A: np.ndarray, V: np.ndarray) -> tuple:
    """Capacity and harmonic measure from the A-side of a solved potential."""
    flux = -(chain.w[A] * (chain.Q @ V)[A])
    flux = np.clip(flux, 0.0, None)
    cap = float(flux.sum())
    nu = flux / cap if cap > 0 else np.full(len(A), 1.0 / len(A))
    return cap, nu


def equilibrium_potential(chain: FiniteChain, A, B) -> HarmonicData:
    """Solve for the equilibrium potentials and capacity of (A, B)."""
    A = _as_index_array(A, chain.n)
    B = _as_index_array(B, chain.n)
    if np.intersect1d(A, B).size:
        raise ValueError("A and B must be disjoint")
    adj = chain.adjoint()
    V = _potential(chain, A, B)
    V_star = _potential(adj, A, B)
    # harmonic measure nu uses the forward chain, nu* the reversed chain
    cap, nu = _one_sided_cap(chain, A, V)
    cap_star, nu_star = _one_sided_cap(adj, A, V_star)
    V_ba = 1.0 - V  # potential of (B, A) by complementarity
    cap_ba, _ = _one_sided_cap(chain, B, V_ba)
    return HarmonicData(
        A=A, B=B, V=V, V_star=V_star, cap=cap, cap_ba=cap_ba,
        cap_star=cap_star, nu=nu, nu_star=nu_star,
        log_shift=-math.log(chain.total_weight),
    )


def capacity(chain: FiniteChain, A, B) -> float:
    """Capacity in shifted units."""
    return equilibrium_potential(chain, A, B).cap


def mean_hitting_time(chain: FiniteChain, x0: int, A) -> float:
    """Expected hitting time of A from x0 (true time units)."""
    A = _as_index_array(A, chain.n)
    x0 = int(x0)
    if x0 in set(A.tolist()):
        return 0.0
    u = _expected_reward_vector(chain, np.ones(chain.n), A)
    return float(u[x0])


def _expected_reward_vector(chain: FiniteChain, reward: np.ndarray,
                            B: np.ndarray) -> np.ndarray:
    n = chain.n
    mask = np.zeros(n, dtype=bool)
    mask[B] = True
    interior = np.nonzero(~mask)[0]
    u = np.zeros(n)
    if len(interior):
        Q = chain.Q.tocsr()
        Qii = Q[interior][:, interior]
        u[interior] = _solve(-Qii, reward[interior], "expected reward")
    return u


def expected_reward(chain: FiniteChain, start: np.ndarray, reward: np.ndarray,
                    B) -> float:
    """E_start of the integral of reward(X_t) dt up to the hitting time of B."""
    B = _as_index_array(B, chain.n)
    start = np.asarray(start, dtype=float)
    if np.any(start[B] != 0.0):
        raise ValueError("start distribution must vanish on B")
    u = _expected_reward_vector(chain, np.asarray(reward, dtype=float), B)
    return float(np.dot(start, u))


@dataclass
class TraceResult:
    chain: FiniteChain
    states: np.ndarray  # original indices of the kept states
    max_clip: float  # largest negative off-diagonal clipped to zero


def trace_generator(chain: FiniteChain, E) -> TraceResult:
    """The chain watched only on E, via the Schur complement of the rates.

    Rate matrix Q_EE - Q_EF Q_FF^{-1} Q_FE; tiny negative off-diagonal
    round-off is clipped to zero and the largest clip reported.
    """
    E = _as_index_array(E, chain.n)
    mask = np.zeros(chain.n, dtype=bool)
    mask[E] = True
    F = np.nonzero(~mask)[0]
    Q = chain.Q.tocsr()
    if len(F) == 0:
        return TraceResult(FiniteChain(Q, chain.w.copy()), E, 0.0)
    if len(F) * len(E) > _MAX_DENSE_TRACE:
        raise ValueError("trace system too large for dense Schur complement")
    Qee = Q[E][:, E].toarray()
    Qef = Q[E][:, F].tocsc()
    Qfe = Q[F][:, E].toarray()
    Qff = sparse.csc_matrix(Q[F][:, F])
    X = _solve(Qff, Qfe, "trace generator")
    R = Qee - Qef @ X
    off = R - np.diag(np.diag(R))
    max_clip = float(max(0.0, -off.min())) if off.size else 0.0
    off = np.clip(off, 0.0, None)
    lam = off.sum(axis=1)
    Rt = sparse.csr_matrix(off - np.diag(lam))
    return TraceResult(FiniteChain(Rt, chain.w[E]), E, max_clip)


def mean_jump_rates(chain: FiniteChain, wells: Sequence) -> tuple:
    """Mean jump rates between wells for the trace on their union.

    Returns (r, lam) where r[i, j] is the weight-averaged trace rate from
    well i to well j (r[i, i] = 0) and lam[i] = sum_j r[i, j].
    """
    wells = [_as_index_array(wset, chain.n) for wset in wells]
    allw = np.concatenate(wells)
    if len(np.unique(allw)) != len(allw):
        raise ValueError("wells must be disjoint")
    tr = trace_generator(chain, allw)
    pos = {int(s): k for k, s in enumerate(tr.states)}
    groups = [np.array([pos[int(s)] for s in wset]) for wset in wells]
    M = len(wells)
    r = np.zeros((M, M))
    Qt = tr.chain.Q.tocsr()
    wv = tr.chain.w
    for i in range(M):
        mass = wv[groups[i]].sum()
        flux = wv[groups[i]] @ Qt[groups[i]]
        for j in range(M):
            if i == j:
                continue
            r[i, j] = float(flux[groups[j]].sum()) / mass
    lam = r.sum(axis=1)
    return r, lam


class CollapsedChain(FiniteChain):
    """Chain with the set E1 collapsed to a single point.

    Kept states appear first in their original relative order; the collapsed
    point is the last state.  ``keep`` lists the original indices of the kept
    states and ``o`` is the index of the collapsed point.
    """

    def __init__(self, Q, w, keep: np.ndarray, o: int):
        super().__init__(Q, w)
        self.keep = keep
        self.o = int(o)
        self._map = {int(s): k for k, s in enumerate(keep)}

    def relabel(self, orig: int) -> int:
        """Collapsed index of an original state (the point for E1 members)."""
        return self._map.get(int(orig), self.o)

    def relabel_set(self, s) -> np.ndarray:
        return np.asarray(sorted({self.relabel(int(i)) for i in s}),
                          dtype=np.int64)


def collapse(chain: FiniteChain, E1) -> CollapsedChain:
    """Collapse E1 to a point with weight-averaged outgoing rates."""
    E1 = _as_index_array(E1, chain.n)
    if len(E1) >= chain.n:
        raise ValueError("E1 must be a proper subset")
    mask = np.zeros(chain.n, dtype=bool)
    mask[E1] = True
    keep = np.nonzero(~mask)[0]
    Q = chain.Q.tocsr()
    w = chain.w
    W1 = float(w[E1].sum())
    n_new = len(keep) + 1
    o = n_new - 1
    Qkk = Q[keep][:, keep]
    to_o = np.asarray(Q[keep][:, E1].sum(axis=1)).ravel()
    from_o = (w[E1] @ Q[E1][:, keep]) / W1
    from_o = np.asarray(from_o).ravel()
    off = sparse.lil_matrix((n_new, n_new))
    off[:o, :o] = Qkk - sparse.diags(np.asarray(Qkk.diagonal()).ravel())
    off[:o, o] = to_o.reshape(-1, 1)
    off[o, :o] = from_o
    off = off.tocsr()
    lam = np.asarray(off.sum(axis=1)).ravel()
    Qc = off - sparse.diags(lam)
    wc = np.concatenate([w[keep], [W1]])
    return CollapsedChain(Qc, wc, keep, o)


def collapsed_hit_prob(gc: CollapsedChain, start: int, A, B) -> float:
    """P_start[hit A before B] on the collapsed chain."""
    hd = equilibrium_potential(gc, A, B)
    return float(hd.V[int(start)])


# ---------------------------------------------------------------------------
# Subtraction-free solvers (dense state elimination)
#
# Direct sparse solves lose all relative accuracy once the capacity falls
# below machine epsilon times the weight scale (deep wells at large N).  The
# eliminations below only ever add, multiply and divide positive numbers, so
# every intermediate keeps full relative accuracy regardless of conditioning.
# ---------------------------------------------------------------------------

def _dense_rates_permuted(chain: FiniteChain, keep: np.ndarray) -> np.ndarray:
    """Dense off-diagonal rate matrix with the kept states moved to the
    front (in the given order) and all others after them."""
    n = chain.n
    if n > _MAX_DENSE_ELIM:
        raise ValueError(
            f"chain too large for dense stable elimination ({n} states)")
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    perm = np.concatenate([keep, np.nonzero(~mask)[0]])
    R = chain.offdiag().toarray()[np.ix_(perm, perm)]
    np.fill_diagonal(R, 0.0)
    return R


def _eliminate_states(R: np.ndarray, n_keep: int,
                      g: Optional[np.ndarray] = None):
    """Eliminate trailing states of a dense rate matrix in place.

    Maintains the invariant that each remaining state's equation reads
    lam(x) u(x) = g(x) + sum_y R(x, y) u(y) with lam(x) the off-diagonal row
    sum over the remaining states.  No subtractions occur.
    """
    m = R.shape[0]
    while m > n_keep:
        s = m - 1
        row = R[s, :s]
        lam = float(row.sum())
        if lam <= 0.0:
            raise ValueError(
                "state with no outgoing rate encountered during elimination")
        col = R[:s, s] / lam
        R[:s, :s] += np.outer(col, row)
        np.fill_diagonal(R[:s, :s], 0.0)
        if g is not None:
            g[:s] += col * g[s]
        m = s
    return R[:n_keep, :n_keep], (None if g is None else g[:n_keep])


def stable_capacity(chain: FiniteChain, A, B) -> float:
    """Capacity (shifted units) by subtraction-free state elimination.

    Eliminates every state outside A and B; the capacity is the total traced
    conductance from A to B.  Keeps full relative accuracy at any N, at dense
    O(n^3) cost.
    """
    A = _as_index_array(A, chain.n)
    B = _as_index_array(B, chain.n)
    if np.intersect1d(A, B).size:
        raise ValueError("A and B must be disjoint")
    keep = np.concatenate([A, B])
    R = _dense_rates_permuted(chain, keep)
    Rk, _ = _eliminate_states(R, len(keep))
    wA = chain.w[A]
    return float(wA @ Rk[: len(A), len(A):].sum(axis=1))


def stable_hitting_time(chain: FiniteChain, x0: int, A) -> float:
    """Expected hitting time of A from x0 (true units) by subtraction-free
    state elimination."""
    A = _as_index_array(A, chain.n)
    x0 = int(x0)
    if x0 in set(A.tolist()):
        return 0.0
    keep = np.concatenate([[x0], A])
    R = _dense_rates_permuted(chain, keep)
    g = np.ones(chain.n)
    Rk, gk = _eliminate_states(R, len(keep), g)
    lam = float(Rk[0, 1:].sum())
    if lam <= 0.0:
        raise ValueError("start state cannot reach the target set")
    return float(gk[0]) / lam
