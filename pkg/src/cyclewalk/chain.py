"""Generators of non-reversible cycle random walks and generic finite chains.

The cycle walk jumps along the edges of translated lattice cycles.  All
weights and conductances are kept in log form with a single global shift so
that nothing underflows at large N; quantities reported in "shifted units"
are the true values multiplied by the total unnormalized weight.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import sparse

from cyclewalk.lattice import Cycle, LatticeDomain

__all__ = [
    "FiniteChain",
    "Generator",
    "build_generator",
    "stationary_weights",
    "drift",
    "dirichlet_form",
    "sector_ratio",
]


class FiniteChain:
    """Continuous-time Markov chain given by a rate matrix and unnormalized
    stationary weights.

    ``Q`` is the generator matrix (zero row sums, nonnegative off-diagonal);
    ``w`` are unnormalized stationary weights in shifted units (the true
    stationary measure is w / sum(w)).  Conductances c(x,y) = w(x) Q(x,y) are
    in the same shifted units.
    """

    def __init__(self, Q: sparse.spmatrix, w: np.ndarray):
        self.Q = sparse.csr_matrix(Q)
        self.w = np.asarray(w, dtype=float)
        self.n = self.Q.shape[0]
        if self.Q.shape != (self.n, self.n) or len(self.w) != self.n:
            raise ValueError("inconsistent chain dimensions")
        self._cond = None
        self._csym = None
        self._adjoint = None
        self._edge_space = None

    # -- measures -----------------------------------------------------------
    @property
    def total_weight(self) -> float:
        return float(self.w.sum())

    @property
    def mu(self) -> np.ndarray:
        """Normalized stationary distribution."""
        return self.w / self.w.sum()

    @property
    def lam(self) -> np.ndarray:
        """Per-state total exit rate."""
        return -self.Q.diagonal()

    def offdiag(self) -> sparse.csr_matrix:
        Q = self.Q.copy().tolil()
        Q.setdiag(0.0)
        return Q.tocsr()

    def stationarity_residual(self) -> float:
        """max |w^T Q| relative to the largest weighted rate."""
        r = np.abs(self.w @ self.Q)
        scale = float(np.max(self.w * self.lam)) or 1.0
        return float(np.max(r)) / scale

    # -- conductances -------------------------------------------------------
    def conductance(self) -> sparse.csr_matrix:
        """c(x,y) = w(x) Q(x,y) on off-diagonal entries, shifted units."""
        if self._cond is None:
            off = self.offdiag()
            self._cond = sparse.diags(self.w) @ off
            self._cond = self._cond.tocsr()
        return self._cond

    def sym_conductance(self) -> sparse.csr_matrix:
        if self._csym is None:
            C = self.conductance()
            self._csym = ((C + C.T) * 0.5).tocsr()
        return self._csym

    # -- adjoint and symmetrization ----------------------------------------
    def adjoint(self) -> "FiniteChain":
        """Time-reversed chain: rates Q*(x,y) = c(y,x)/w(x)."""
        if self._adjoint is None:
            C = self.conductance()
            off = sparse.diags(1.0 / self.w) @ C.T
            off = off.tocsr()
            lam = np.asarray(off.sum(axis=1)).ravel()
            Qadj = off - sparse.diags(lam)
            self._adjoint = FiniteChain(Qadj, self.w)
        return self._adjoint

    def symmetrized(self) -> "FiniteChain":
        """Reversible chain with conductances (c(x,y)+c(y,x))/2."""
        cs = self.sym_conductance()
        off = sparse.diags(1.0 / self.w) @ cs
        off = off.tocsr()
        lam = np.asarray(off.sum(axis=1)).ravel()
        return FiniteChain(off - sparse.diags(lam), self.w)

    # -- bilinear forms (shifted units) -------------------------------------
    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.Q @ f

    def inner_mu(self, f: np.ndarray, h: np.ndarray) -> float:
        """<f, h> weighted by the unnormalized weights (shifted units)."""
        return float(np.dot(self.w * f, h))

    def dirichlet(self, f: np.ndarray) -> float:
        """Dirichlet form <f, -Lf> in shifted units."""
        return self.inner_mu(f, -(self.Q @ f))

    def sector_ratio(self, f: np.ndarray, h: np.ndarray) -> float:
        df, dh = self.dirichlet(f), self.dirichlet(h)
        if df <= 0.0 or dh <= 0.0:
            raise ValueError("sector ratio requires nonzero Dirichlet forms")
        num = self.inner_mu(f, -(self.Q @ h))
        return num * num / (df * dh)


class Generator(FiniteChain):
    """Cycle-walk generator over a lattice domain.

    For each cycle translate the walk jumps from vertex j to vertex j+1 at
    rate exp(logk - logw(vertex j)), where logk is the (shifted) log of the
    common conductance of the translate.  The adjoint walk traverses the
    cycles backwards.
    """

    def __init__(self, lat: LatticeDomain, field, adjoint: bool = False,
                 variant: str = "cycle-mean"):
        if variant not in ("cycle-mean", "center"):
            raise ValueError(f"unknown rate variant {variant!r}")
        self.lat = lat
        self.field = field
        self.is_adjoint = bool(adjoint)
        self.variant = variant
        N = lat.N

        fn = np.array([field.f_n(x, N) for x in lat.coords()])
        self.shift = -N * float(fn.min())  # s = -N min F_N
        logw = -N * fn - self.shift
        w = np.exp(logw)

        # per cycle translate: shifted log-conductance
        self.logk = []
        rows, cols, vals = [], [], []
        for k, cyc in enumerate(lat.cycles):
            members = lat.translate_members[k]
            L = cyc.length
            if variant == "cycle-mean":
                lk = np.mean(logw[members], axis=1)
            else:
                zbar = cyc.center / N
                lk = np.array(
                    [-N * field.f_n(x + zbar, N) - self.shift
                     for x in lat.coords(lat.interiors[k])]
                )
            self.logk.append(lk)
            for j in range(L):
                src = members[:, j]
                dst = members[:, (j + 1) % L]
                if adjoint:
                    src, dst = dst, src
                rows.append(src)
                cols.append(dst)
                vals.append(np.exp(lk - logw[src]))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        n = lat.n_states
        off = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        off.sum_duplicates()
        lam = np.asarray(off.sum(axis=1)).ravel()
        Q = off - sparse.diags(lam)
        super().__init__(Q, w)
        self.logw = logw

    @property
    def max_cycle_length(self) -> int:
        return max(c.length for c in self.lat.cycles)

    def structural_adjoint(self) -> "Generator":
        """The walk traversing every cycle backwards (equals adjoint())."""
        return Generator(self.lat, self.field, adjoint=not self.is_adjoint,
                         variant=self.variant)

    def log_normalizer(self) -> float:
        """log of the Gibbs normalization constant."""
        m = self.logw.max()
        return m + math.log(np.exp(self.logw - m).sum()) + self.shift

    def dirichlet_decomposed(self, f: np.ndarray,
                             subset: Optional[dict] = None) -> float:
        """Dirichlet form as a sum over cycle translates, shifted units.

        ``subset`` maps cycle index -> boolean mask (or index array) over that
        cycle's translates; default is all translates of all cycles.
        """
        total = 0.0
        for k, cyc in enumerate(self.lat.cycles):
            members = self.lat.translate_members[k]
            lk = self.logk[k]
            if subset is not None:
                if k not in subset:
                    continue
                sel = subset[k]
                members = members[sel]
                lk = lk[sel]
            fv = f[members]  # (n_k, L)
            diffs = np.diff(np.concatenate([fv, fv[:, :1]], axis=1), axis=1)
            total += 0.5 * float(np.sum(np.exp(lk) * np.sum(diffs ** 2, axis=1)))
        return total


def build_generator(lat: LatticeDomain, field, adjoint: bool = False,
                    variant: str = "cycle-mean") -> Generator:
    return Generator(lat, field, adjoint=adjoint, variant=variant)


def stationary_weights(g: FiniteChain):
    """Normalized stationary distribution and the log normalization constant."""
    mu = g.mu
    if isinstance(g, Generator):
        return mu, g.log_normalizer()
    return mu, math.log(g.total_weight)


def drift(field, cycle: Cycle, x, adjoint: bool = False) -> np.ndarray:
    """Macroscopic drift b(x) = -sum_j e^{(z_j - zbar).grad F(x)} (z_{j+1} - z_j).

    The adjoint drift replaces z_{j+1} - z_j by z_{j-1} - z_j.  The scaled
    walk concentrates on solutions of dx/dt = -b(x).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gradf = np.atleast_1d(np.asarray(field.grad(x), dtype=float))
    pts = cycle.points.astype(float)  # (L, d)
    L = cycle.length
    zbar = pts.mean(axis=0)
    out = np.zeros(field.dim)
    for j in range(L):
        weight = math.exp(float(np.dot(pts[j] - zbar, gradf)))
        if adjoint:
            step = pts[(j - 1) % L] - pts[j]
        else:
            step = pts[(j + 1) % L] - pts[j]
        out -= weight * step
    return out


def dirichlet_form(g: Generator, f: np.ndarray, subset=None) -> float:
    """Dirichlet form in shifted units, decomposed over cycle translates."""
    return g.dirichlet_decomposed(np.asarray(f, dtype=float), subset)


def sector_ratio(g: FiniteChain, f: np.ndarray, h: np.ndarray) -> float:
    """<f, -Lh>^2 / (D(f) D(h)); bounded by 4 L^2 for cycle walks."""
    return g.sector_ratio(np.asarray(f, dtype=float), np.asarray(h, dtype=float))
