"""The reduced Markov chain on wells and closed-form sharp predictions.

The reduced chain jumps between wells i and j at rate omega_{i,j}/omega_bar_i,
where omega_{i,j} sums the saddle weights of the saddles connecting the two
wells.  Its capacities determine the prefactors of the sharp capacity,
jump-rate, and mean-transition-time formulas that the exact finite-N solves
are compared against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cyclewalk.landscape import LandscapeStructure, PotentialField
from cyclewalk.saddle import SaddleAnalysis, analyze_saddle

__all__ = [
    "ReducedChain",
    "build_reduced",
    "cap_Y",
    "c_m",
    "PredictionSet",
    "predictions",
    "two_well_time_log",
]

_SOLVE_TOL = 1e-12


@dataclass
class ReducedChain:
    """Finite chain on the well set with symmetric edge weights omega."""

    omega: np.ndarray  # (M, M), symmetric, zero diagonal
    nu: np.ndarray  # per-well weights
    h: np.ndarray  # per-well bottom values
    H: float  # common saddle height
    theta: list  # increasing distinct depths
    T: list  # wells at each depth
    S_tail: list  # wells at least each depth

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        if not np.allclose(om, om.T):
            raise ValueError("omega must be symmetric")
        if np.any(np.diag(om) != 0):
            raise ValueError("omega must have zero diagonal")
        self.omega = om

    @property
    def M(self) -> int:
        return len(self.nu)

    @property
    def omega_i(self) -> np.ndarray:
        return self.omega.sum(axis=1)

    @property
    def mu(self) -> np.ndarray:
        """Stationary distribution omega_bar (reversible)."""
        oi = self.omega_i
        return oi / oi.sum()

    def rates(self) -> np.ndarray:
        """Jump rates omega_{i,j}/omega_bar_i."""
        return self.omega / self.mu[:, None]


def build_reduced(ls: LandscapeStructure, field: PotentialField, cycles,
                  nu: Optional[np.ndarray] = None) -> tuple:
    """Assemble the reduced chain from a landscape, analyzing every saddle.

    Returns (chain, analyses) where analyses maps each well pair to the list
    of saddle analyses summed into its omega entry.
    """
    from cyclewalk.landscape import well_weights, depth_partition

    if nu is None:
        nu = well_weights(ls, field)
    M = ls.n_wells
    omega = np.zeros((M, M))
    analyses = {}
    for (i, j), sads in ls.saddles.items():
        alist = [analyze_saddle(field, s, cycles) for s in sads]
        analyses[(i, j)] = alist
        w = sum(a.omega for a in alist)
        omega[i, j] += w
        omega[j, i] += w
    theta, T, S_tail = depth_partition(ls)
    rc = ReducedChain(omega=omega, nu=np.asarray(nu, dtype=float),
                      h=ls.h.copy(), H=ls.H, theta=theta, T=T, S_tail=S_tail)
    return rc, analyses


def _harmonic_q(rc: ReducedChain, A: set, B: set) -> np.ndarray:
    """q = probability of reaching A before B, harmonic for the reduced chain."""
    M = rc.M
    q = np.zeros(M)
    for i in A:
        q[i] = 1.0
    interior = [i for i in range(M) if i not in A and i not in B]
    if interior:
        om = rc.omega
        K = np.zeros((len(interior), len(interior)))
        rhs = np.zeros(len(interior))
        pos = {i: k for k, i in enumerate(interior)}
        for i in interior:
            k = pos[i]
            K[k, k] = om[i].sum()
            for j in range(M):
                if j == i:
                    continue
                if j in pos:
                    K[k, pos[j]] -= om[i, j]
                else:
                    rhs[k] += om[i, j] * q[j]
        sol = np.linalg.solve(K, rhs) if np.linalg.det(K) != 0 else \
            np.linalg.lstsq(K, rhs, rcond=None)[0]
        for i in interior:
            q[i] = sol[pos[i]]
    return q


def cap_Y(rc: ReducedChain, A, B, return_q: bool = False):
    """Capacity of the reduced chain between disjoint well sets.

    Computed both as the Dirichlet form of the harmonic profile and as the
    boundary flux; the two must agree to machine precision.
    """
    A, B = set(A), set(B)
    if not A or not B or A & B:
        raise ValueError("A and B must be disjoint and nonempty")
    q = _harmonic_q(rc, A, B)
    om = rc.omega
    diff = q[:, None] - q[None, :]
    cap_d = 0.5 * float(np.sum(om * diff ** 2))
    cap_f = float(sum(om[i, j] * (1.0 - q[j])
                      for i in A for j in range(rc.M) if j not in A))
    scale = max(cap_d, cap_f, 1e-300)
    if abs(cap_d - cap_f) > 1e-10 * scale:
        raise RuntimeError(
            f"capacity expressions disagree: {cap_d} vs {cap_f}")
    if return_q:
        return cap_d, q
    return cap_d


def c_m(rc: ReducedChain, S_m, i: int, j: int) -> float:
    """Effective edge weight between wells i and j relative to the class S_m.

    c_m(i,j) = (cap({i}, S_m-{i}) + cap({j}, S_m-{j}) - cap({i,j}, S_m-{i,j}))/2,
    with cap(X, empty) = 0; for the top class this reduces to omega_{i,j}.
    """
    S_m = set(S_m)
    if i == j or i not in S_m or j not in S_m:
        raise ValueError("need i != j, both in S_m")
    rest_ij = S_m - {i, j}
    ci = cap_Y(rc, {i}, S_m - {i})
    cj = cap_Y(rc, {j}, S_m - {j})
    cij = cap_Y(rc, {i, j}, rest_ij) if rest_ij else 0.0
    return 0.5 * (ci + cj - cij)


@dataclass
class PredictionSet:
    """Sharp-formula predictions in log form.

    ``log_*_unnorm`` quantities are logs of the corresponding exact quantity
    multiplied by the Gibbs normalizer, so comparisons with exact solves use
    the solver's shift and never the normalizer itself.
    """

    N: int
    d: int
    rc: ReducedChain

    @property
    def log_kappa_unnorm(self) -> float:
        """log of (capacity scale x normalizer) = (d/2-1)log(2 pi N) - N H."""
        return (self.d / 2.0 - 1.0) * math.log(2.0 * math.pi * self.N) \
            - self.N * self.rc.H

    def cap_log_unnorm(self, A, B) -> float:
        """Predicted log of (capacity x normalizer) between well groups."""
        return self.log_kappa_unnorm + math.log(cap_Y(self.rc, A, B))

    def well_mass_log_unnorm(self, i: int) -> float:
        """Predicted log of (well mass x normalizer)."""
        return (self.d / 2.0) * math.log(2.0 * math.pi * self.N) \
            - self.N * self.rc.h[i] + math.log(self.rc.nu[i])

    def jump_rate_log(self, m: int, i: int, j: int) -> float:
        """Predicted log mean jump rate i -> j for the trace on depth class m
        (true units)."""
        S_m = self.rc.S_tail[m]
        cm = c_m(self.rc, S_m, i, j)
        if cm <= 0:
            return -math.inf
        return -self.N * (self.rc.H - self.rc.h[i]) \
            - math.log(2.0 * math.pi * self.N) \
            + math.log(cm) - math.log(self.rc.nu[i])

    def ek_time_log(self, i: int) -> float:
        """Predicted log mean transition time from well i to the deeper/equal
        wells outside it (true units)."""
        # depth class of well i
        u = next(m for m, Tm in enumerate(self.rc.T) if i in Tm)
        S_u = self.rc.S_tail[u]
        denom = sum(c_m(self.rc, S_u, i, j) for j in S_u if j != i)
        theta_u = self.rc.theta[u]
        return math.log(self.rc.nu[i]) \
            + math.log(2.0 * math.pi * self.N) + theta_u * self.N \
            - math.log(denom)


def predictions(rc: ReducedChain, ls: LandscapeStructure, N: int) -> PredictionSet:
    return PredictionSet(N=int(N), d=ls.field.dim, rc=rc)


def two_well_time_log(sa: SaddleAnalysis, field: PotentialField,
                      m_location, N: int) -> float:
    """Closed-form log mean transition time for a two-well landscape.

    2 pi N / mu x sqrt(-det H_sigma / det H_min) x e^{N dF} e^{dG}, with dF
    and dG the potential and perturbation gaps between saddle and minimum.
    """
    m_location = np.atleast_1d(np.asarray(m_location, dtype=float))
    Hm = np.atleast_2d(field.hess(m_location))
    det_m = np.linalg.det(Hm)
    det_s = -np.linalg.det(sa.H)
    dF = sa.value - float(field.f(m_location))
    dG = sa.g_value - float(field.g(m_location))
    return math.log(2.0 * math.pi * N) - math.log(sa.mu) \
        + 0.5 * (math.log(det_s) - math.log(det_m)) + N * dF + dG
