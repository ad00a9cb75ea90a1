"""Potential landscapes: critical points, wells, saddles and depth structure.

A landscape is a smooth scalar potential F on a bounded domain, together with
a bounded perturbation G.  The finite-size potential used by the chain module
is F_N = F + G/N.  This module locates and classifies the critical points of
F, builds the well decomposition at a given saddle height H, and computes the
per-well weights entering the sharp transition-rate formulas.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

__all__ = [
    "PotentialField",
    "CriticalPoint",
    "LandscapeStructure",
    "DegenerateCriticalPointError",
    "find_critical_points",
    "build_landscape",
    "well_weights",
    "depth_partition",
    "double_well_1d",
    "triple_well_1d",
    "double_well_2d",
    "polynomial_field",
]

GRAD_TOL = 1e-10
NEWTON_TOL = 1e-12
DEDUP_RADIUS = 1e-6
DEGENERATE_EIG_TOL = 1e-8
VALUE_TOL = 1e-9


class DegenerateCriticalPointError(RuntimeError):
    """A critical point has a (near-)zero Hessian eigenvalue."""


@dataclass(frozen=True)
class PotentialField:
    """Smooth potential F with gradient/Hessian evaluators and perturbation G.

    ``box`` is a tuple of per-axis closed intervals bounding the domain; an
    optional ``member`` predicate carves out a non-box domain inside the box.
    """

    dim: int
    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], float]
    box: tuple
    member: Optional[Callable[[np.ndarray], bool]] = None

    def contains(self, x: np.ndarray) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        for i, (lo, hi) in enumerate(self.box):
            if x[i] < lo or x[i] > hi:
                return False
        if self.member is not None and not self.member(x):
            return False
        return True

    def f_n(self, x: np.ndarray, n: int) -> float:
        """Finite-size potential F + G/N."""
        return self.f(x) + self.g(x) / n

    def check_hessian_symmetry(self, x: np.ndarray, tol: float = 1e-10) -> bool:
        h = np.asarray(self.hess(x), dtype=float)
        scale = max(np.linalg.norm(h), 1.0)
        return np.max(np.abs(h - h.T)) <= tol * scale

    def boundary_outflow_ok(self, samples_per_face: int = 16) -> bool:
        """Sampled check that the gradient points outward on the box faces."""
        rng = np.random.default_rng(0)
        for axis in range(self.dim):
            for side, normal in ((0, -1.0), (1, 1.0)):
                for _ in range(samples_per_face):
                    x = np.array(
                        [rng.uniform(lo, hi) for lo, hi in self.box], dtype=float
                    )
                    x[axis] = self.box[axis][side]
                    if self.member is not None and not self.member(x):
                        continue
                    n_vec = np.zeros(self.dim)
                    n_vec[axis] = normal
                    if float(np.dot(self.grad(x), n_vec)) <= 0.0:
                        return False
        return True


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    value: float
    kind: str  # "minimum" | "saddle" | "other"
    eigenvalues: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", np.atleast_1d(np.asarray(self.location, dtype=float)))
        object.__setattr__(self, "eigenvalues", np.sort(np.asarray(self.eigenvalues, dtype=float)))


def _classify(eigs: np.ndarray) -> str:
    if np.min(np.abs(eigs)) <= DEGENERATE_EIG_TOL:
        raise DegenerateCriticalPointError(
            f"degenerate critical point: eigenvalues {eigs}"
        )
    neg = int(np.sum(eigs < 0))
    if neg == 0:
        return "minimum"
    if neg == 1:
        return "saddle"
    return "other"


def find_critical_points(field: PotentialField, seeds_per_axis: int = 12) -> list:
    """Locate all critical points of F inside the domain.

    Seeds a regular grid, refines each seed with a damped Newton iteration on
    the gradient, deduplicates, and classifies by Hessian eigenvalue signs.
    Deterministic for fixed inputs.
    """
    if seeds_per_axis < 8:
        raise ValueError("seeds_per_axis must be >= 8")
    axes = [
        np.linspace(lo, hi, seeds_per_axis + 2)[1:-1] for lo, hi in field.box
    ]
    found: list[np.ndarray] = []
    failed_seeds = 0
    for seed in itertools.product(*axes):
        x0 = np.array(seed, dtype=float)
        if field.member is not None and not field.member(x0):
            continue
        sol = optimize.root(field.grad, x0, jac=field.hess, method="hybr", tol=1e-13)
        x = np.atleast_1d(sol.x)
        # polish with plain Newton steps
        for _ in range(50):
            g = np.atleast_1d(np.asarray(field.grad(x), dtype=float))
            if np.linalg.norm(g) <= NEWTON_TOL:
                break
            try:
                step = np.linalg.solve(np.atleast_2d(field.hess(x)), g)
            except np.linalg.LinAlgError:
                break
            x = x - step
        g = np.atleast_1d(np.asarray(field.grad(x), dtype=float))
        if np.linalg.norm(g) > GRAD_TOL:
            failed_seeds += 1
            continue
        if not field.contains(x):
            continue
        if not any(np.linalg.norm(x - y) <= DEDUP_RADIUS for y in found):
            found.append(x)
    if failed_seeds and not found:
        warnings.warn(
            f"root refinement failed from {failed_seeds} seeds and found nothing",
            RuntimeWarning,
        )
    # deterministic ordering
    found.sort(key=lambda p: tuple(p))
    points = []
    for x in found:
        eigs = np.linalg.eigvalsh(np.atleast_2d(field.hess(x)))
        kind = _classify(eigs)
        points.append(CriticalPoint(x, float(field.f(x)), kind, eigs))
    return points


def _rk4_descent(field: PotentialField, x0: np.ndarray, step: float,
                 max_steps: int = 200_000, grad_tol: float = 1e-9) -> np.ndarray:
    """Integrate dx/dt = -grad F from x0 until the gradient vanishes."""
    x = np.array(x0, dtype=float)
    rhs = lambda y: -np.atleast_1d(np.asarray(field.grad(y), dtype=float))
    for _ in range(max_steps):
        g = rhs(x)
        if np.linalg.norm(g) <= grad_tol:
            break
        k1 = g
        k2 = rhs(x + 0.5 * step * k1)
        k3 = rhs(x + 0.5 * step * k2)
        k4 = rhs(x + step * k3)
        x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


@dataclass
class LandscapeStructure:
    """Wells, saddles and depth structure of a potential at saddle height H."""

    field: PotentialField
    H: float
    epsilon: float
    minima: list  # all minima as CriticalPoint
    wells: list  # list (per well) of lists of minimum indices into ``minima``
    saddles: dict  # {(i, j) with i<j: [CriticalPoint, ...]}
    deepest: list  # per well, list of CriticalPoint (the deepest minima)
    h: np.ndarray  # per-well bottom value h_i
    m: list  # per-well designated minimum location (lexicographic tie-break)
    targets: list  # per well, locations of minima outside it with F <= F(m_i)
    _descent_step: float = dc_field(default=1e-3, repr=False)

    @property
    def n_wells(self) -> int:
        return len(self.wells)

    @property
    def theta_hat(self) -> np.ndarray:
        """Per-well depth H - h_i."""
        return self.H - self.h

    def classify(self, x: np.ndarray) -> Optional[int]:
        """Map a point to its well index by steepest descent, or None."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.field.f(x) >= self.H:
            return None
        end = _rk4_descent(self.field, x, self._descent_step)
        best, best_d = None, np.inf
        for w, idxs in enumerate(self.wells):
            for k in idxs:
                d = np.linalg.norm(end - self.minima[k].location)
                if d < best_d:
                    best, best_d = w, d
        return best


def _diameter(box) -> float:
    return math.sqrt(sum((hi - lo) ** 2 for lo, hi in box))


def _grid_components(field: PotentialField, level: float, minima: list,
                     pts_per_axis: int = 96) -> list:
    """Group minima into connected components of the sublevel set {F <= level}.

    Flood fill on a regular grid; robust for the smooth desk-scale potentials
    targeted here.
    """
    axes = [np.linspace(lo, hi, pts_per_axis) for lo, hi in field.box]
    shape = tuple(len(a) for a in axes)
    mask = np.zeros(shape, dtype=bool)
    for idx in itertools.product(*[range(s) for s in shape]):
        x = np.array([axes[k][idx[k]] for k in range(field.dim)])
        if field.member is not None and not field.member(x):
            continue
        mask[idx] = field.f(x) <= level
    labels = -np.ones(shape, dtype=int)
    n_comp = 0
    for start in itertools.product(*[range(s) for s in shape]):
        if not mask[start] or labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = n_comp
        while stack:
            cur = stack.pop()
            for axis in range(field.dim):
                for dlt in (-1, 1):
                    nxt = list(cur)
                    nxt[axis] += dlt
                    if not (0 <= nxt[axis] < shape[axis]):
                        continue
                    nxt = tuple(nxt)
                    if mask[nxt] and labels[nxt] < 0:
                        labels[nxt] = n_comp
                        stack.append(nxt)
        n_comp += 1
    comp_of_min = []
    for cp in minima:
        idx = tuple(
            int(np.argmin(np.abs(axes[k] - cp.location[k])))
            for k in range(field.dim)
        )
        comp_of_min.append(labels[idx])
    groups: dict[int, list[int]] = {}
    for k, c in enumerate(comp_of_min):
        groups.setdefault(c, []).append(k)
    # stable well ordering: by lexicographically smallest member location
    ordered = sorted(groups.values(), key=lambda idxs: tuple(minima[idxs[0]].location))
    return ordered


def build_landscape(field: PotentialField, H: float, epsilon: Optional[float],
                    crit: Sequence[CriticalPoint]) -> LandscapeStructure:
    """Build the well/saddle structure at saddle height H.

    Wells are the connected components of the sublevel set below H, found by
    grid flood fill at level H - epsilon and refined by steepest-descent
    classification.  Each saddle at height H is assigned to the pair of wells
    reached by descending along its two unstable directions.
    """
    crit = list(crit)
    minima = [c for c in crit if c.kind == "minimum"]
    saddles_all = [c for c in crit if c.kind == "saddle"]
    at_h = [s for s in saddles_all if abs(s.value - H) <= VALUE_TOL]
    if not at_h:
        raise ValueError(f"no saddle points at height H={H}")
    below = [c.value for c in crit if c.value < H - VALUE_TOL]
    if epsilon is None:
        # half the gap between H and the largest critical value strictly below
        gap = H - max(below) if below else 1.0
        epsilon = 0.5 * gap
    for c in crit:
        if H - epsilon + VALUE_TOL < c.value < H - VALUE_TOL:
            raise ValueError(
                f"critical value {c.value} lies strictly between H-epsilon and H"
            )
    wells = _grid_components(field, H - epsilon, minima)
    step = 1e-3 * _diameter(field.box)

    ls = LandscapeStructure(
        field=field, H=H, epsilon=epsilon, minima=minima, wells=wells,
        saddles={}, deepest=[], h=np.zeros(len(wells)), m=[], targets=[],
        _descent_step=step,
    )

    # assign saddles at height H to well pairs via the unstable direction
    delta = 1e-3
    saddle_map: dict[tuple, list] = {}
    for s in at_h:
        hmat = np.atleast_2d(field.hess(s.location))
        eigval, eigvec = np.linalg.eigh(hmat)
        u1 = eigvec[:, 0]  # eigenvector of the (unique) negative eigenvalue
        ends = []
        for sgn in (1.0, -1.0):
            w = ls.classify(s.location + sgn * delta * u1)
            if w is None:
                raise ValueError(f"descent from saddle {s.location} left the wells")
            ends.append(w)
        i, j = sorted(ends)
        if i == j:
            raise ValueError(f"degenerate saddle pairing at {s.location}")
        saddle_map.setdefault((i, j), []).append(s)
    ls.saddles = saddle_map

    # depths, deepest minima, designated minima, targets
    h = np.empty(len(wells))
    deepest, m_pts = [], []
    for w, idxs in enumerate(wells):
        vals = np.array([minima[k].value for k in idxs])
        h[w] = vals.min()
        deep = [minima[k] for k in idxs if minima[k].value <= h[w] + VALUE_TOL]
        deep.sort(key=lambda c: tuple(c.location))
        deepest.append(deep)
        m_pts.append(deep[0].location)
    ls.h = h
    ls.deepest = deepest
    ls.m = m_pts
    targets = []
    for w in range(len(wells)):
        outside = [
            minima[k].location
            for w2, idxs in enumerate(wells) if w2 != w
            for k in idxs
            if minima[k].value <= h[w] + VALUE_TOL
        ]
        targets.append(outside)
    ls.targets = targets
    return ls


def well_weights(ls: LandscapeStructure, field: PotentialField) -> np.ndarray:
    """Per-well weight: sum over deepest minima of e^{-G(m)} / sqrt(det Hess F(m))."""
    nu = np.zeros(ls.n_wells)
    for w, deep in enumerate(ls.deepest):
        for cp in deep:
            hmat = np.atleast_2d(field.hess(cp.location))
            det = np.linalg.det(hmat)
            if det <= 0 or np.any(np.linalg.eigvalsh(hmat) <= 0):
                raise ValueError(
                    f"Hessian not positive definite at minimum {cp.location}"
                )
            nu[w] += math.exp(-field.g(cp.location)) / math.sqrt(det)
    return nu


def depth_partition(ls: LandscapeStructure):
    """Increasing depths theta, the classes T_m of wells at each depth, and
    the tails S_m (wells at least that deep)."""
    th = ls.theta_hat
    theta = []
    for v in np.sort(th):
        if not theta or v > theta[-1] + VALUE_TOL:
            theta.append(float(v))
    T = [
        {i for i in range(ls.n_wells) if abs(th[i] - t) <= VALUE_TOL}
        for t in theta
    ]
    S_tail = [set().union(*T[m:]) for m in range(len(T))]
    return theta, T, S_tail


# ---------------------------------------------------------------------------
# Built-in potentials
# ---------------------------------------------------------------------------

def polynomial_field(monomials, box, g_monomials=(), member=None) -> PotentialField:
    """Potential from a list of (coefficient, exponent-tuple) monomials.

    ``monomials`` defines F; ``g_monomials`` the perturbation G (default 0).
    """
    monos = [(float(c), tuple(int(e) for e in exps)) for c, exps in monomials]
    g_monos = [(float(c), tuple(int(e) for e in exps)) for c, exps in g_monomials]
    dim = len(box)

    def _eval(ms, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(sum(c * np.prod(x ** np.array(e)) for c, e in ms))

    def f(x):
        return _eval(monos, x)

    def g(x):
        return _eval(g_monos, x)

    def grad(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(dim)
        for c, e in monos:
            for k in range(dim):
                if e[k] == 0:
                    continue
                term = c * e[k]
                for j in range(dim):
                    p = e[j] - (1 if j == k else 0)
                    term *= x[j] ** p
                out[k] += term
        return out

    def hess(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((dim, dim))
        for c, e in monos:
            for k in range(dim):
                for l in range(dim):
                    ek = e[k] - (1 if k == l else 0)
                    if e[k] == 0 or (k == l and e[k] < 2):
                        continue
                    fac = c * e[k] * (e[l] - (1 if k == l else 0) if k == l else e[l])
                    if k != l and e[l] == 0:
                        continue
                    term = fac
                    for j in range(dim):
                        p = e[j] - (1 if j == k else 0) - (1 if j == l else 0)
                        term *= x[j] ** p
                    out[k, l] += term
        return out

    return PotentialField(dim=dim, f=f, grad=grad, hess=hess, g=g,
                          box=tuple(tuple(map(float, b)) for b in box),
                          member=member)


def double_well_1d(g_monomials=()) -> PotentialField:
    """F(x) = x^4/4 - x^2/2 on (-1.6, 1.6): minima at +-1, saddle at 0."""
    return polynomial_field([(0.25, (4,)), (-0.5, (2,))], [(-1.6, 1.6)],
                            g_monomials=g_monomials)


def triple_well_1d(g_monomials=()) -> PotentialField:
    """F(x) = x^2 (x^2-1)^2 on (-1.2, 1.2): minima at -1, 0, 1; saddles at
    +-1/sqrt(3) of height 4/27."""
    # x^2 (x^2 - 1)^2 = x^6 - 2 x^4 + x^2
    return polynomial_field([(1.0, (6,)), (-2.0, (4,)), (1.0, (2,))],
                            [(-1.2, 1.2)], g_monomials=g_monomials)


def double_well_2d(g_monomials=()) -> PotentialField:
    """F(x,y) = x^4/4 - x^2/2 + y^2/2: minima (+-1, 0), saddle (0,0)."""
    return polynomial_field(
        [(0.25, (4, 0)), (-0.5, (2, 0)), (0.5, (0, 2))],
        [(-1.6, 1.6), (-1.0, 1.0)], g_monomials=g_monomials)


BUILTIN_FIELDS = {
    "double_well_1d": double_well_1d,
    "triple_well_1d": triple_well_1d,
    "double_well_2d": double_well_2d,
}
