"""Event-driven Monte Carlo of the cycle walk.

Exact continuous-time simulation: exponential holding times and jumps
proportional to the rates.  The inner loop is compiled with numba when
available; setting CYCLEWALK_DISABLE_NUMBA=1 (or missing numba) selects an
identical pure-Python fallback.  Replicas draw reproducible per-index seeds.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cyclewalk.chain import FiniteChain

__all__ = [
    "HAS_NUMBA",
    "TrajectoryStats",
    "sample_hitting_time",
    "estimate_mean_hitting",
    "well_visit_sequence",
    "occupation_times",
]

DEFAULT_MAX_STEPS = 10 ** 9


def _hitting_kernel(indptr, indices, rates, lam, start, target, seed, max_steps):
    np.random.seed(seed)
    t = 0.0
    x = start
    for _ in range(max_steps):
        if target[x]:
            return t
        u1 = np.random.random()
        t += -np.log1p(-u1) / lam[x]
        u2 = np.random.random() * lam[x]
        acc = 0.0
        nxt = x
        for k in range(indptr[x], indptr[x + 1]):
            acc += rates[k]
            if acc >= u2:
                nxt = indices[k]
                break
        x = nxt
    return -1.0


def _occupation_kernel(indptr, indices, rates, lam, start, seed, n_steps, out):
    np.random.seed(seed)
    x = start
    for _ in range(n_steps):
        u1 = np.random.random()
        out[x] += -np.log1p(-u1) / lam[x]
        u2 = np.random.random() * lam[x]
        acc = 0.0
        nxt = x
        for k in range(indptr[x], indptr[x + 1]):
            acc += rates[k]
            if acc >= u2:
                nxt = indices[k]
                break
        x = nxt
    return x


def _jump_sequence_kernel(indptr, indices, rates, lam, start, label, seed,
                          n_steps, out):
    """Record the sequence of distinct labeled regions entered; returns the
    number of entries written to ``out``."""
    np.random.seed(seed)
    x = start
    count = 0
    last = -2
    for _ in range(n_steps):
        lb = label[x]
        if lb >= 0 and lb != last:
            if count < len(out):
                out[count] = lb
                count += 1
            last = lb
        u2 = np.random.random() * lam[x]
        acc = 0.0
        nxt = x
        for k in range(indptr[x], indptr[x + 1]):
            acc += rates[k]
            if acc >= u2:
                nxt = indices[k]
                break
        x = nxt
    return count


HAS_NUMBA = False
if os.environ.get("CYCLEWALK_DISABLE_NUMBA", "0") != "1":
    try:
        import numba

        _hitting_kernel = numba.njit(cache=True)(_hitting_kernel)
        _occupation_kernel = numba.njit(cache=True)(_occupation_kernel)
        _jump_sequence_kernel = numba.njit(cache=True)(_jump_sequence_kernel)
        HAS_NUMBA = True
    except ImportError:
        pass


def _csr_arrays(chain: FiniteChain):
    if not hasattr(chain, "_sim_arrays"):
        off = chain.offdiag().tocsr()
        off.sum_duplicates()
        chain._sim_arrays = (
            off.indptr.astype(np.int64),
            off.indices.astype(np.int64),
            off.data.astype(np.float64),
            chain.lam.astype(np.float64),
        )
    return chain._sim_arrays


@dataclass
class TrajectoryStats:
    n: int
    mean: float
    stderr: float
    samples: Optional[np.ndarray] = None


def sample_hitting_time(chain: FiniteChain, x0: int, A, seed: int,
                        max_steps: int = DEFAULT_MAX_STEPS) -> float:
    """One exact sample of the hitting time of A from x0."""
    indptr, indices, rates, lam = _csr_arrays(chain)
    target = np.zeros(chain.n, dtype=np.bool_)
    target[np.asarray(list(A), dtype=np.int64)] = True
    t = _hitting_kernel(indptr, indices, rates, lam, int(x0), target,
                        int(seed), int(max_steps))
    if t < 0:
        raise RuntimeError(
            f"hitting not observed within {max_steps} steps (seed {seed})")
    return float(t)


def estimate_mean_hitting(chain: FiniteChain, x0: int, A, n: int, seed: int,
                          max_steps: int = DEFAULT_MAX_STEPS,
                          keep_samples: bool = False) -> TrajectoryStats:
    """Mean hitting time over n independent replicas with derived seeds."""
    if n < 2:
        raise ValueError("need at least 2 replicas")
    samples = np.empty(n)
    for i in range(n):
        samples[i] = sample_hitting_time(chain, x0, A, seed + i, max_steps)
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(n))
    return TrajectoryStats(n=n, mean=mean, stderr=stderr,
                           samples=samples if keep_samples else None)


def well_visit_sequence(chain: FiniteChain, x0: int, wells, n_steps: int,
                        seed: int) -> np.ndarray:
    """Sequence of distinct wells entered by the embedded jump chain."""
    indptr, indices, rates, lam = _csr_arrays(chain)
    label = np.full(chain.n, -1, dtype=np.int64)
    for k, wset in enumerate(wells):
        label[np.asarray(list(wset), dtype=np.int64)] = k
    out = np.full(n_steps, -1, dtype=np.int64)
    count = _jump_sequence_kernel(indptr, indices, rates, lam, int(x0), label,
                                  int(seed), int(n_steps), out)
    return out[:count]


def occupation_times(chain: FiniteChain, x0: int, n_steps: int,
                     seed: int) -> np.ndarray:
    """Per-state total holding time over a trajectory of n_steps jumps."""
    indptr, indices, rates, lam = _csr_arrays(chain)
    out = np.zeros(chain.n)
    _occupation_kernel(indptr, indices, rates, lam, int(x0), int(seed),
                       int(n_steps), out)
    return out
