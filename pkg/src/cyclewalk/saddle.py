"""Saddle-point matrix analysis and mesoscopic neighborhoods.

At a saddle the macroscopic drift has Jacobian M = A H, where H is the
Hessian of the potential and A is assembled from the cycle increments.  M has
a unique negative eigenvalue -mu whose left eigen-structure determines the
direction v and curvature alpha of the transition channel, the saddle weight
entering sharp transition-rate formulas, and the Gaussian-CDF approximation
of the equilibrium potential on a mesoscopic box around the saddle.

The eigenvector v is normalized to unit length with positive component along
the Hessian's unstable direction; alpha transforms as alpha(c v) =
alpha(v)/c^2, so only invariant combinations (alpha v v^T, sqrt(alpha) v,
v^T H^{-1} v = -1/alpha) are used downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.special import ndtr

from cyclewalk.chain import Generator, drift
from cyclewalk.landscape import CriticalPoint, PotentialField
from cyclewalk.lattice import Cycle, LatticeDomain

__all__ = [
    "SaddleAnalysis",
    "MesoBoxes",
    "cycle_matrix_A",
    "analyze_saddle",
    "drift_jacobian_fd",
    "mesoscopic_sets",
    "log_kappa_shifted",
    "vn_eval",
    "vn_residual_profile",
    "local_dirichlet",
    "gaussian_sum_ratio",
]


def cycle_matrix_A(cycles: Sequence[Cycle]) -> np.ndarray:
    """A = sum over cycles of sum_i (z_i - z_{i+1}) z_i^T.

    The symmetric part is (1/2) sum (z_{i+1}-z_i)(z_{i+1}-z_i)^T, positive
    definite whenever the increments generate the integer lattice.
    """
    d = cycles[0].dim
    A = np.zeros((d, d))
    for c in cycles:
        pts = c.points.astype(float)
        L = c.length
        for i in range(L):
            A += np.outer(pts[i] - pts[(i + 1) % L], pts[i])
    sym = 0.5 * (A + A.T)
    if np.any(np.linalg.eigvalsh(sym) <= 0):
        raise RuntimeError("symmetric part of the cycle matrix is not positive "
                           "definite (internal consistency error)")
    return A


def _negative_eigpair(B: np.ndarray) -> tuple:
    """The unique real negative eigenvalue of B and its eigenvector."""
    vals, vecs = sla.eig(B)
    neg = [k for k in range(len(vals))
           if vals[k].real < 0 and abs(vals[k].imag) <= 1e-10 * abs(vals[k])]
    if len(neg) != 1:
        raise RuntimeError(
            f"expected a unique real negative eigenvalue, found {vals}")
    k = neg[0]
    v = vecs[:, k].real
    return float(-vals[k].real), v / np.linalg.norm(v)


@dataclass
class SaddleAnalysis:
    location: np.ndarray
    value: float  # potential value at the saddle (the barrier height H)
    H: np.ndarray  # Hessian
    lambda1: float  # -lambda1 is the negative Hessian eigenvalue
    lambdas: np.ndarray  # all Hessian eigenvalues, ascending
    u: np.ndarray  # Hessian eigenvectors as columns, u[:,0] unstable
    A: np.ndarray
    M: np.ndarray  # A H, Jacobian of the drift at the saddle
    mu: float
    v: np.ndarray  # unit eigenvector of (M)^T at -mu, v.u1 > 0
    alpha: float
    v_star: np.ndarray  # adjoint version (eigenvector of H A)
    alpha_star: float
    omega: float  # mu e^{-G(sigma)} / sqrt(-det H)
    g_value: float

    @property
    def u1(self) -> np.ndarray:
        return self.u[:, 0]

    @property
    def mu_star(self) -> float:
        return self.mu

    def vn(self, x: np.ndarray, N: int, adjoint: bool = False) -> np.ndarray:
        """Gaussian-CDF approximation of the equilibrium potential at points
        x (physical coordinates, broadcastable)."""
        v = self.v_star if adjoint else self.v
        a = self.alpha_star if adjoint else self.alpha
        y = (np.asarray(x, dtype=float) - self.location) @ v
        return ndtr(math.sqrt(a * N) * y)

    def identity_residuals(self) -> dict:
        """Residuals of the exact matrix identities tied to (mu, v, alpha)."""
        H, v, a = self.H, self.v, self.alpha
        Hinv = np.linalg.inv(H)
        detH = np.linalg.det(H)
        res = {}
        res["vHinv"] = abs(float(v @ Hinv @ v) + 1.0 / a) * a
        res["det_alpha"] = abs(np.linalg.det(H + a * np.outer(v, v))) / abs(detH)
        res["det_2alpha"] = abs(
            np.linalg.det(H + 2 * a * np.outer(v, v)) + detH) / abs(detH)
        null = Hinv @ v
        res["null_space"] = float(
            np.linalg.norm((H + a * np.outer(v, v)) @ null) / np.linalg.norm(null))
        lam = self.lambdas
        coeff = self.u.T @ v
        lhs = coeff[0] ** 2 / self.lambda1
        rhs = sum(coeff[k] ** 2 / lam[k] for k in range(1, len(lam))) + 1.0 / a
        res["component_identity"] = abs(lhs - rhs) / abs(lhs)
        res["mu_star_minus_mu"] = 0.0
        return res


def analyze_saddle(field: PotentialField, sigma: CriticalPoint,
                   cycles: Sequence[Cycle]) -> SaddleAnalysis:
    """Full eigen-analysis of the drift Jacobian at a saddle point."""
    if sigma.kind != "saddle":
        raise ValueError("analyze_saddle requires a saddle critical point")
    loc = sigma.location
    H = np.atleast_2d(np.asarray(field.hess(loc), dtype=float))
    lam, u = np.linalg.eigh(H)
    if not (lam[0] < 0 < lam[1] if len(lam) > 1 else lam[0] < 0):
        raise ValueError("Hessian does not have exactly one negative eigenvalue")
    A = cycle_matrix_A(cycles)
    M = A @ H
    mu, v = _negative_eigpair(H @ A.T)  # (M)^T = H A^T
    if v @ u[:, 0] < 0:
        v = -v
    alpha = mu / float(v @ A @ v)
    mu2, v_star = _negative_eigpair(H @ A)  # (M*)^T = H A
    if abs(mu2 - mu) > 1e-9 * mu:
        raise RuntimeError("adjoint negative eigenvalue differs from mu")
    if v_star @ u[:, 0] < 0:
        v_star = -v_star
    alpha_star = mu / float(v_star @ A.T @ v_star)
    detH = np.linalg.det(H)
    if detH >= 0:
        raise ValueError("saddle Hessian must have negative determinant")
    gval = float(field.g(loc))
    omega = mu * math.exp(-gval) / math.sqrt(-detH)
    return SaddleAnalysis(
        location=loc, value=float(sigma.value), H=H, lambda1=float(-lam[0]),
        lambdas=lam, u=u, A=A, M=M, mu=mu, v=v, alpha=alpha,
        v_star=v_star, alpha_star=alpha_star, omega=omega, g_value=gval,
    )


def drift_jacobian_fd(field: PotentialField, cycle_or_cycles, sigma,
                      h: float = 1e-5, adjoint: bool = False) -> np.ndarray:
    """Central-difference Jacobian of the drift at a point.

    For multiple cycles the drifts add.
    """
    cycles = cycle_or_cycles if isinstance(cycle_or_cycles, (list, tuple)) \
        else [cycle_or_cycles]
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    d = len(sigma)
    J = np.zeros((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        bp = sum((drift(field, c, sigma + e, adjoint) for c in cycles),
                 np.zeros(d))
        bm = sum((drift(field, c, sigma - e, adjoint) for c in cycles),
                 np.zeros(d))
        J[:, k] = (bp - bm) / (2 * h)
    return J


@dataclass
class MesoBoxes:
    """Mesoscopic box around a saddle and its partitioned boundary.

    All state containers hold dense state indices.  ``core`` maps each cycle
    index to a boolean mask over that cycle's translates selecting those that
    meet the box; ``closure`` is the union of their member states.  side1 is
    the boundary piece with side1_sign * (x - sigma).u1 > eps.
    """

    eps: float
    C: np.ndarray
    B: np.ndarray
    closure: np.ndarray
    boundary: np.ndarray
    rim: np.ndarray
    side1: np.ndarray
    side2: np.ndarray
    Bhat: np.ndarray
    core: dict
    side1_sign: float
    well_plus: Optional[int]  # well reached by descent from sigma + eps u1
    well_minus: Optional[int]


def mesoscopic_sets(sa: SaddleAnalysis, lat: LatticeDomain,
                    field: PotentialField, landscape=None) -> MesoBoxes:
    """Build the saddle box at scale eps = N^{-2/5} and split its boundary.

    The box is the eps-window along the channel direction u1 with transversal
    half-widths sqrt(2 lambda1/lambda_k) eps, intersected with the sublevel
    set {F <= H + lambda1 eps^2/4}; the boundary splits into the high-
    potential rim and the two transversal exits.
    """
    N = lat.N
    d = lat.dim
    eps = N ** (-0.4)
    coords = lat.coords()
    y = coords - sa.location
    proj = y @ sa.u  # (n, d), column k = component along u_k
    lam = sa.lambdas
    in_c = np.abs(proj[:, 0]) <= eps + 1e-15
    for k in range(1, d):
        half = math.sqrt(2.0 * sa.lambda1 / lam[k]) * eps
        in_c &= np.abs(proj[:, k]) <= half + 1e-15
    C = np.nonzero(in_c)[0]
    if len(C) == 0:
        raise ValueError("N too small for mesoscopic analysis (empty box)")
    fvals = np.array([field.f(x) for x in coords[C]])
    level = sa.value + 0.25 * sa.lambda1 * eps ** 2
    B = C[fvals <= level + 1e-15]
    if len(B) == 0:
        raise ValueError("N too small for mesoscopic analysis (empty box)")
    in_b = np.zeros(lat.n_states, dtype=bool)
    in_b[B] = True

    core = {}
    closure_mask = np.zeros(lat.n_states, dtype=bool)
    for k in range(len(lat.cycles)):
        members = lat.translate_members[k]
        sel = np.any(in_b[members], axis=1)
        core[k] = sel
        closure_mask[np.unique(members[sel])] = True
    closure = np.nonzero(closure_mask)[0]
    boundary = np.nonzero(closure_mask & ~in_b)[0]

    fb = np.array([field.f(x) for x in coords[boundary]])
    rim_mask = fb > level + 1e-15
    rest = boundary[~rim_mask]
    rim = boundary[rim_mask]
    pr = proj[rest, 0]
    plus = rest[pr > eps - 1e-15]
    minus = rest[pr < -eps + 1e-15]
    if len(plus) + len(minus) != len(rest):
        missing = rest[(pr <= eps - 1e-15) & (pr >= -eps + 1e-15)]
        raise RuntimeError(
            f"boundary partition failed: {len(missing)} states in no piece")

    well_plus = well_minus = None
    if landscape is not None:
        delta = max(2 * eps, 1e-3)
        well_plus = landscape.classify(sa.location + delta * sa.u1)
        well_minus = landscape.classify(sa.location - delta * sa.u1)
    side1_sign = 1.0
    side1, side2 = plus, minus
    if well_plus is not None and well_minus is not None \
            and well_minus < well_plus:
        # orient side1 toward the lower-labeled well
        side1_sign = -1.0
        side1, side2 = minus, plus
        well_plus, well_minus = well_minus, well_plus

    if d >= 2:
        hat = np.zeros(lat.n_states, dtype=bool)
        hat[B] = True
        for k in range(1, d):
            half = math.sqrt(sa.lambda1 / (2.0 * (d - 1) * lam[k])) * eps
            hat[np.abs(proj[:, k]) >= half] = False
        Bhat = np.nonzero(hat)[0]
    else:
        Bhat = B.copy()

    return MesoBoxes(eps=eps, C=C, B=B, closure=closure, boundary=boundary,
                     rim=rim, side1=side1, side2=side2, Bhat=Bhat, core=core,
                     side1_sign=side1_sign, well_plus=well_plus,
                     well_minus=well_minus)


def vn_eval(sa: SaddleAnalysis, N: int, x, adjoint: bool = False) -> float:
    """Gaussian-CDF potential approximation at a single physical point."""
    v = sa.v_star if adjoint else sa.v
    a = sa.alpha_star if adjoint else sa.alpha
    y = float((np.atleast_1d(np.asarray(x, dtype=float)) - sa.location) @ v)
    return float(ndtr(math.sqrt(a * N) * y))


def vn_residual_profile(g: Generator, sa: SaddleAnalysis,
                        boxes: MesoBoxes) -> dict:
    """Scaled supremum of the generator applied to the CDF approximation.

    The harmonicity defect obeys |L V_N| <= C (eps^2/sqrt(N))
    e^{-alpha N (x.v)^2/2} on the box; the returned statistic is the smallest
    admissible C, which should stay bounded along an N-sweep.
    """
    N = g.lat.N
    coords = g.lat.coords()
    vn = np.asarray(ndtr(math.sqrt(sa.alpha * N)
                         * ((coords - sa.location) @ sa.v)))
    resid = g.Q @ vn
    yv = (coords[boxes.B] - sa.location) @ sa.v
    stat = np.abs(resid[boxes.B]) * np.exp(0.5 * sa.alpha * N * yv ** 2) \
        * math.sqrt(N) / boxes.eps ** 2
    fn = -(g.logw + g.shift) / N
    side1 = boxes.side1
    if len(side1):
        bstat = float(np.max(
            np.exp(-N * (fn[side1] - sa.value)) * (1.0 - vn[side1]) ** 2))
    else:
        bstat = 0.0
    return {"residual_stat": float(np.max(stat)),
            "boundary_stat": bstat,
            "residual_at_saddle": float(
                np.abs(resid[boxes.B])[np.argmin(np.abs(yv))])}


def log_kappa_shifted(g: Generator, H_value: float) -> float:
    """log of the capacity scale in the generator's shifted units."""
    N = g.lat.N
    d = g.lat.dim
    return (d / 2.0 - 1.0) * math.log(2.0 * math.pi * N) - N * H_value - g.shift


def local_dirichlet(g: Generator, sa: SaddleAnalysis, boxes: MesoBoxes) -> float:
    """Dirichlet form of the CDF approximation over the box core, divided by
    its sharp value (capacity scale times saddle weight)."""
    N = g.lat.N
    coords = g.lat.coords()
    vn = np.asarray(ndtr(math.sqrt(sa.alpha * N)
                         * ((coords - sa.location) @ sa.v)))
    D = g.dirichlet_decomposed(vn, subset=boxes.core)
    log_ratio = math.log(D) - log_kappa_shifted(g, sa.value) - math.log(sa.omega)
    return math.exp(log_ratio)


def gaussian_sum_ratio(sa: SaddleAnalysis, lat: LatticeDomain,
                       boxes: MesoBoxes) -> float:
    """Lattice Gaussian sum over the box against its closed-form limit.

    Sums e^{-(N/2) y^T (H + 2 alpha v v^T) y} over box states and divides by
    (2 pi N)^{d/2} / sqrt(-det H); the ratio tends to 1.
    """
    N = lat.N
    d = lat.dim
    y = lat.coords(boxes.B) - sa.location
    Mq = sa.H + 2.0 * sa.alpha * np.outer(sa.v, sa.v)
    q = np.einsum("ij,jk,ik->i", y, Mq, y)
    total = float(np.exp(-0.5 * N * q).sum())
    limit = (2.0 * math.pi / N) ** (d / 2.0) * N ** d \
        / math.sqrt(-np.linalg.det(sa.H))
    return total / limit
