"""Experiment orchestration and report emission.

Configs are TOML files describing a potential, a cycle family, a list of
scales N, and an experiment kind.  Reports are written as CSV (one row per
check), JSON (full structure), and gnuplot-ready two-column sweep files.
Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import cyclewalk
from cyclewalk import landscape as lsc
from cyclewalk import lattice as lat_mod
from cyclewalk import chain as chain_mod
from cyclewalk import ptheory, flows, reduced, simulate
from cyclewalk import saddle as saddle_mod

__all__ = ["main", "run", "load_config", "ConfigError", "Report", "Row"]

CSV_COLUMNS = ["experiment", "theorem_tag", "N", "exact_log", "predicted_log",
               "ratio", "tolerance", "pass"]

KINDS = ("identities", "capacity-sweep", "ek-sweep", "jump-rates",
         "flows-verify", "mc-check")

DEFAULT_TOLERANCES = {
    "stationarity": 1e-12,
    "flow-duality": 1e-10,
    "dirichlet-principle": 1e-8,
    "thomson-principle": 1e-8,
    "capacity-symmetry": 1e-9,
    "sector-bound": 0.0,  # ratio must not exceed 4 L^2
    "collapse-capacity": 1e-9,
    "collapsed-hit-identity": 1e-8,
    "mean-holding-identity": 1e-8,
    "reward-identity": 1e-9,
    "collapse-commute": 1e-12,
    "collapse-norm": 0.0,
    "cycle-divergence-formula": 1e-12,
    "capacity-sharp": 0.25,
    "well-mass": 0.05,
    "ek-time": 0.15,
    "jump-rate": 0.3,
    "local-dirichlet": 0.2,
    "corrected-flow-divergence": 1e-12,
    "mc-hitting": 3.0,  # in standard errors
}


class ConfigError(Exception):
    pass


@dataclass
class Row:
    experiment: str
    theorem_tag: str
    N: int
    exact_log: float
    predicted_log: float
    ratio: float
    tolerance: float
    passed: bool


@dataclass
class Report:
    config: dict
    rows: list
    meta: dict

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for r in self.rows:
                wr.writerow([r.experiment, r.theorem_tag, r.N,
                             repr(float(r.exact_log)),
                             repr(float(r.predicted_log)),
                             repr(float(r.ratio)), repr(float(r.tolerance)),
                             "pass" if r.passed else "fail"])

    def write_json(self, path: str) -> None:
        payload = {
            "config": self.config,
            "meta": self.meta,
            "rows": [asdict(r) for r in self.rows],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, default=str)

    def write_sweeps(self, outdir: str, name: str) -> None:
        by_tag = {}
        for r in self.rows:
            by_tag.setdefault(r.theorem_tag, []).append(r)
        for tag, rows in by_tag.items():
            if len({r.N for r in rows}) < 2:
                continue
            path = os.path.join(outdir, f"{name}_{tag}.dat")
            with open(path, "w") as fh:
                fh.write("# N ratio\n")
                for r in sorted(rows, key=lambda r: r.N):
                    fh.write(f"{r.N} {r.ratio!r}\n")


def read_csv(path: str) -> list:
    """Parse an emitted CSV back into Row objects (round-trip check)."""
    out = []
    with open(path) as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV header {header}")
        for rec in rd:
            out.append(Row(rec[0], rec[1], int(rec[2]), float(rec[3]),
                           float(rec[4]), float(rec[5]), float(rec[6]),
                           rec[7] == "pass"))
    return out


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    exp = cfg.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("missing [experiment] table")
    kind = exp.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    pot = cfg.get("potential")
    if not isinstance(pot, dict):
        raise ConfigError("missing [potential] table")
    if "builtin" in pot:
        if pot["builtin"] not in lsc.BUILTIN_FIELDS:
            raise ConfigError(
                f"unknown builtin potential {pot['builtin']!r}; "
                f"choose from {sorted(lsc.BUILTIN_FIELDS)}")
    elif "monomials" not in pot or "box" not in pot:
        raise ConfigError(
            "[potential] needs either 'builtin' or 'monomials' plus 'box'")
    lt = cfg.get("lattice")
    if not isinstance(lt, dict) or "cycles" not in lt or "N" not in lt:
        raise ConfigError("missing [lattice] table with 'cycles' and 'N'")
    Ns = lt["N"]
    if not isinstance(Ns, list) or sorted(Ns) != Ns or len(set(Ns)) != len(Ns):
        raise ConfigError("lattice.N must be a strictly increasing list")
    for cyc in lt["cycles"]:
        c = lat_mod.Cycle(tuple(tuple(v) for v in cyc))
        diag = lat_mod.validate_cycle(c)
        if not diag.ok:
            raise ConfigError(f"invalid cycle {cyc}: {diag.failures}")


def _build_field(cfg: dict):
    pot = cfg["potential"]
    gm = [(c, tuple(e)) for c, e in pot.get("g_monomials", [])]
    if "builtin" in pot:
        return lsc.BUILTIN_FIELDS[pot["builtin"]](g_monomials=gm)
    monos = [(c, tuple(e)) for c, e in pot["monomials"]]
    return lsc.polynomial_field(monos, [tuple(b) for b in pot["box"]],
                                g_monomials=gm)


@dataclass
class Setup:
    field: object
    cycles: list
    crit: list
    ls: object
    nu: np.ndarray
    rc: object
    analyses: dict


def build_setup(cfg: dict) -> Setup:
    field = _build_field(cfg)
    cycles = [lat_mod.Cycle(tuple(tuple(v) for v in c))
              for c in cfg["lattice"]["cycles"]]
    crit = lsc.find_critical_points(field, cfg.get("landscape", {}).get(
        "seeds_per_axis", 12))
    saddles = [c for c in crit if c.kind == "saddle"]
    if not saddles:
        raise ConfigError("potential has no saddle points")
    H = cfg.get("landscape", {}).get("H", "auto")
    if H == "auto":
        H = max(s.value for s in saddles)
    eps = cfg.get("landscape", {}).get("epsilon", "auto")
    eps = None if eps == "auto" else float(eps)
    ls = lsc.build_landscape(field, float(H), eps, crit)
    nu = lsc.well_weights(ls, field)
    rc, analyses = reduced.build_reduced(ls, field, cycles, nu=nu)
    return Setup(field=field, cycles=cycles, crit=crit, ls=ls, nu=nu,
                 rc=rc, analyses=analyses)


def _discretize(setup: Setup, N: int):
    lat = lat_mod.discretize(setup.field, N, setup.cycles)
    gen = chain_mod.build_generator(lat, setup.field)
    wells = lat_mod.metastable_sets(lat, setup.ls)
    return lat, gen, wells


def _tol(cfg: dict, tag: str) -> float:
    return float(cfg.get("tolerances", {}).get(tag, DEFAULT_TOLERANCES[tag]))


def _ratio_row(cfg, exp, tag, N, exact_log, pred_log, final: bool) -> Row:
    ratio = math.exp(exact_log - pred_log)
    tol = _tol(cfg, tag)
    passed = True if not final else abs(ratio - 1.0) <= tol
    return Row(exp, tag, N, exact_log, pred_log, ratio,
               tol if final else float("inf"), passed)


def _residual_row(cfg, exp, tag, N, residual) -> Row:
    tol = _tol(cfg, tag)
    return Row(exp, tag, N, float("nan"), float("nan"), residual, tol,
               residual <= tol)


# ---------------------------------------------------------------------------
# Experiment kinds
# ---------------------------------------------------------------------------

def _run_identities(cfg, setup, N, rng) -> list:
    exp = cfg["experiment"].get("name", "identities")
    rows = []
    lat, gen, wells = _discretize(setup, N)
    n = gen.n
    rows.append(_residual_row(cfg, exp, "stationarity", N,
                              gen.stationarity_residual()))
    A, B = wells[0], wells[1]
    hd = ptheory.equilibrium_potential(gen, A, B)
    # capacity symmetries
    sym_res = max(abs(hd.cap - hd.cap_ba), abs(hd.cap - hd.cap_star)) / hd.cap
    rows.append(_residual_row(cfg, exp, "capacity-symmetry", N, sym_res))
    # variational principles at the exact optimizer pairs
    f0, phi0 = flows.dirichlet_optimizers(gen, hd)
    dval = flows.dirichlet_value(gen, f0, phi0, A, B, class_tol=1e-5)
    rows.append(_residual_row(cfg, exp, "dirichlet-principle", N,
                              abs(dval - hd.cap) / hd.cap))
    g0, psi0 = flows.thomson_optimizers(gen, hd)
    tval = flows.thomson_value(gen, g0, psi0, A, B, class_tol=1e-5)
    rows.append(_residual_row(cfg, exp, "thomson-principle", N,
                              abs(tval - hd.cap) / hd.cap))
    # duality of field flows on random pairs
    worst = 0.0
    for _ in range(int(cfg["experiment"].get("duality_pairs", 20))):
        f = rng.standard_normal(n)
        h = rng.standard_normal(n)
        phif, phistarf, psif = flows.field_flows(gen, f)
        lhs1 = psif.inner(flows.field_flows(gen, h)[0])
        rhs1 = gen.inner_mu(-(gen.Q @ f), h)
        lhs2 = psif.inner(flows.field_flows(gen, h)[1])
        rhs2 = gen.inner_mu(-(gen.adjoint().Q @ f), h)
        scale = max(abs(rhs1), abs(rhs2), 1.0)
        worst = max(worst, abs(lhs1 - rhs1) / scale, abs(lhs2 - rhs2) / scale)
    rows.append(_residual_row(cfg, exp, "flow-duality", N, worst))
    # sector bound
    bound = 4.0 * gen.max_cycle_length ** 2
    worst = 0.0
    for _ in range(int(cfg["experiment"].get("sector_pairs", 200))):
        f = rng.standard_normal(n)
        h = rng.standard_normal(n)
        worst = max(worst, chain_mod.sector_ratio(gen, f, h))
    rows.append(Row(exp, "sector-bound", N, float("nan"), float("nan"),
                    worst / bound, 1.0, worst <= bound * (1 + 1e-12)))
    # collapsed-chain identities
    gc = ptheory.collapse(gen, A)
    Ac = {gc.o}
    Bc = gc.relabel_set(B)
    capc = ptheory.capacity(gc, Ac, Bc)
    rows.append(_residual_row(cfg, exp, "collapse-capacity", N,
                              abs(capc - hd.cap) / hd.cap))
    # mean holding identity and collapsed hit identity
    r, lam_m = ptheory.mean_jump_rates(gen, wells)
    massA = gen.w[A].sum()
    othersets = np.concatenate([w for k, w in enumerate(wells) if k != 0])
    cap_all = ptheory.capacity(gen, A, othersets)
    rows.append(_residual_row(cfg, exp, "mean-holding-identity", N,
                              abs(massA * lam_m[0] - cap_all) / cap_all))
    restc = gc.relabel_set(othersets[~np.isin(othersets, wells[1])]) \
        if len(wells) > 2 else None
    if restc is not None and len(restc):
        p = ptheory.collapsed_hit_prob(gc, gc.o, Bc, restc)
        rows.append(_residual_row(
            cfg, exp, "collapsed-hit-identity", N,
            abs(r[0, 1] / lam_m[0] - p) / max(p, 1e-300)))
    # harmonic-measure reward identity
    reward = rng.random(n)
    start = np.zeros(n)
    start[hd.A] = hd.nu_star
    lhs = ptheory.expected_reward(gen, start, reward, B)
    rhs = gen.inner_mu(reward, hd.V_star) / hd.cap
    rows.append(_residual_row(cfg, exp, "reward-identity", N,
                              abs(lhs - rhs) / abs(rhs)))
    # collapse of flows: norm inequality and commutation
    es = flows.edge_space(gen)
    worst_norm, worst_comm = 0.0, 0.0
    for _ in range(int(cfg["experiment"].get("flow_samples", 20))):
        phi = flows.Flow(es, rng.standard_normal(es.m) * es.cs)
        phic = flows.collapse_flow(phi, gc)
        worst_norm = max(worst_norm,
                         phic.norm2() - phi.norm2() * (1 + 1e-12))
        f = rng.standard_normal(n)
        f[A] = f[A[0]]
        fc = np.empty(gc.n)
        fc[:gc.o] = f[gc.keep]
        fc[gc.o] = f[A[0]]
        lhsf = flows.collapse_flow(flows.field_flows(gen, f)[0], gc)
        rhsf = flows.field_flows(gc, fc)[0]
        scale = max(1.0, float(np.max(np.abs(rhsf.vec))))
        worst_comm = max(worst_comm,
                         float(np.max(np.abs(lhsf.vec - rhsf.vec))) / scale)
    rows.append(Row(exp, "collapse-norm", N, float("nan"), float("nan"),
                    worst_norm, 0.0, worst_norm <= 0.0))
    rows.append(_residual_row(cfg, exp, "collapse-commute", N, worst_comm))
    # divergence of the local-approximation flow
    sa_pair = min(setup.ls.saddles.keys())
    sa = setup.analyses[sa_pair][0]
    boxes = saddle_mod.mesoscopic_sets(sa, lat, setup.field, setup.ls)
    vn = sa.vn(lat.coords(), N)
    phi_n = flows.Flow(es)
    for k in range(len(lat.cycles)):
        for z in lat.interiors[k][boxes.core[k]]:
            phi_n = phi_n + flows.cycle_flow(gen, vn, int(z), star=True,
                                             cycle_index=k)
    div = phi_n.div()
    in_b = np.zeros(gen.n, dtype=bool)
    in_b[boxes.B] = True
    fully = in_b.copy()
    for k in range(len(lat.cycles)):
        members = lat.translate_members[k]
        outside = members[~boxes.core[k]]
        fully[np.unique(outside)] = False
    target = -(gen.w * (gen.Q @ vn))
    check = np.nonzero(fully)[0]
    if len(check):
        resid = np.max(np.abs(div[check] - target[check])) / \
            max(np.max(np.abs(target[check])), 1e-300)
        rows.append(_residual_row(cfg, exp, "cycle-divergence-formula", N,
                                  float(resid)))
    return rows


def _run_capacity_sweep(cfg, setup, N, final, rng) -> list:
    exp = cfg["experiment"].get("name", "capacity-sweep")
    lat, gen, wells = _discretize(setup, N)
    pred = reduced.predictions(setup.rc, setup.ls, N)
    A_wells = cfg["experiment"].get("A_wells", [0])
    B_wells = cfg["experiment"].get("B_wells",
                                    [setup.ls.n_wells - 1])
    A = np.concatenate([wells[i] for i in A_wells])
    B = np.concatenate([wells[i] for i in B_wells])
    if gen.n <= 4000:
        cap = ptheory.stable_capacity(gen, A, B)
    else:
        cap = ptheory.capacity(gen, A, B)
    exact_log = math.log(cap) + gen.shift
    pred_log = pred.cap_log_unnorm(A_wells, B_wells)
    return [_ratio_row(cfg, exp, "capacity-sharp", N, exact_log, pred_log,
                       final)]


def _run_ek_sweep(cfg, setup, N, final, rng) -> list:
    exp = cfg["experiment"].get("name", "ek-sweep")
    lat, gen, wells = _discretize(setup, N)
    pred = reduced.predictions(setup.rc, setup.ls, N)
    i = int(cfg["experiment"].get("well", 0))
    m_i = lat_mod.nearest_lattice_point(setup.ls.m[i], lat)
    targets = [lat_mod.nearest_lattice_point(x, lat)
               for x in setup.ls.targets[i]]
    if gen.n <= 4000:
        exact = ptheory.stable_hitting_time(gen, m_i, targets)
    else:
        exact = ptheory.mean_hitting_time(gen, m_i, targets)
    return [_ratio_row(cfg, exp, "ek-time", N, math.log(exact),
                       pred.ek_time_log(i), final)]


def _run_jump_rates(cfg, setup, N, final, rng) -> list:
    exp = cfg["experiment"].get("name", "jump-rates")
    lat, gen, wells = _discretize(setup, N)
    pred = reduced.predictions(setup.rc, setup.ls, N)
    r, _ = ptheory.mean_jump_rates(gen, wells)
    rows = []
    i = int(cfg["experiment"].get("from_well", 1))
    j = int(cfg["experiment"].get("to_well", 0))
    pl = pred.jump_rate_log(0, i, j)
    if math.isfinite(pl) and r[i, j] > 0:
        rows.append(_ratio_row(cfg, exp, "jump-rate", N, math.log(r[i, j]),
                               pl, final))
    return rows


def _run_flows_verify(cfg, setup, N, final, rng, dump_dir=None) -> list:
    exp = cfg["experiment"].get("name", "flows-verify")
    lat, gen, wells = _discretize(setup, N)
    sa_pair = min(setup.ls.saddles.keys())
    sa = setup.analyses[sa_pair][0]
    boxes = saddle_mod.mesoscopic_sets(sa, lat, setup.field, setup.ls)
    rows = []
    ratio = saddle_mod.local_dirichlet(gen, sa, boxes)
    rows.append(Row(exp, "local-dirichlet", N, float("nan"), float("nan"),
                    ratio, _tol(cfg, "local-dirichlet") if final else float("inf"),
                    True if not final else
                    abs(ratio - 1.0) <= _tol(cfg, "local-dirichlet")))
    wp = boxes.well_plus if boxes.well_plus is not None else sa_pair[0]
    wm = boxes.well_minus if boxes.well_minus is not None else sa_pair[1]
    t1 = lat_mod.nearest_lattice_point(setup.ls.m[wp], lat)
    t2 = lat_mod.nearest_lattice_point(setup.ls.m[wm], lat)
    phi, phit, report = flows.saddle_test_flow(gen, sa, boxes, (t1, t2))
    resid = report["max_offtarget_div"] / report["komega_shifted"]
    rows.append(_residual_row(cfg, exp, "corrected-flow-divergence", N, resid))
    for key in ("div_side1_over_komega", "div_side2_over_komega",
                "norm_diff_sq_over_kappa", "interior_abs_div_over_komega"):
        rows.append(Row(exp, f"flow-{key}", N, float("nan"), float("nan"),
                        report[key], float("inf"), True))
    if dump_dir is not None:
        path = os.path.join(dump_dir, f"{exp}_flow_N{N}.csv")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["state_i", "state_j", "value"])
            es = phit.es
            for e in np.nonzero(phit.vec)[0]:
                wr.writerow([int(es.ei[e]), int(es.ej[e]), repr(phit.vec[e])])
    return rows


def _run_mc_check(cfg, setup, N, final, rng) -> list:
    exp = cfg["experiment"].get("name", "mc-check")
    lat, gen, wells = _discretize(setup, N)
    i = int(cfg["experiment"].get("well", 0))
    m_i = lat_mod.nearest_lattice_point(setup.ls.m[i], lat)
    targets = [lat_mod.nearest_lattice_point(x, lat)
               for x in setup.ls.targets[i]]
    exact = ptheory.mean_hitting_time(gen, m_i, targets)
    n_samp = int(cfg["experiment"].get("samples", 10_000))
    seed = int(cfg["experiment"].get("seed", 0))
    stats = simulate.estimate_mean_hitting(gen, m_i, targets, n_samp, seed)
    dev = abs(stats.mean - exact) / stats.stderr
    tol = _tol(cfg, "mc-hitting")
    return [Row(exp, "mc-hitting", N, math.log(exact), math.log(stats.mean),
                dev, tol, dev <= tol)]


def run(cfg: dict, outdir: Optional[str] = None,
        dump_flows: bool = False) -> Report:
    kind = cfg["experiment"]["kind"]
    seed = int(cfg["experiment"].get("seed", 0))
    setup = build_setup(cfg)
    Ns = list(cfg["lattice"]["N"])
    workers = int(os.environ.get("CYCLEWALK_WORKERS", "1"))

    def one(N):
        rng = np.random.default_rng(seed + N)
        final = N == Ns[-1]
        if kind == "identities":
            return _run_identities(cfg, setup, N, rng)
        if kind == "capacity-sweep":
            return _run_capacity_sweep(cfg, setup, N, final, rng)
        if kind == "ek-sweep":
            return _run_ek_sweep(cfg, setup, N, final, rng)
        if kind == "jump-rates":
            return _run_jump_rates(cfg, setup, N, final, rng)
        if kind == "flows-verify":
            return _run_flows_verify(cfg, setup, N, final, rng,
                                     dump_dir=outdir if dump_flows else None)
        return _run_mc_check(cfg, setup, N, final, rng)

    t0 = time.time()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(one, Ns))
    else:
        chunks = [one(N) for N in Ns]
    rows = [r for chunk in chunks for r in chunk]
    meta = {
        "version": cyclewalk.__version__,
        "runtime_seconds": time.time() - t0,
        "designated_minima": [list(map(float, m)) for m in setup.ls.m],
        "workers": workers,
    }
    rep = Report(config=cfg, rows=rows, meta=meta)
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        name = cfg["experiment"].get("name", kind)
        rep.write_csv(os.path.join(outdir, f"{name}.csv"))
        rep.write_json(os.path.join(outdir, f"{name}.json"))
        rep.write_sweeps(outdir, name)
    return rep


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="cyclewalk",
        description="Exact potential theory and sharp-rate checks for "
                    "non-reversible cycle random walks.")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--dump-flows", action="store_true",
                       help="write flow edge values as CSV (flows-verify)")
    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config")
    sub.add_parser("list-builtins", help="list built-in potentials")
    args = ap.parse_args(argv)

    if args.command == "list-builtins":
        for name in sorted(lsc.BUILTIN_FIELDS):
            print(name)
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print("config ok")
        return 0
    try:
        rep = run(cfg, outdir=args.out, dump_flows=args.dump_flows)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    n_fail = sum(not r.passed for r in rep.rows)
    print(f"{len(rep.rows)} checks, {n_fail} failed "
          f"({rep.meta['runtime_seconds']:.1f}s)")
    for r in rep.rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"  [{status}] N={r.N:<4d} {r.theorem_tag}: ratio={r.ratio:.6g} "
              f"tol={r.tolerance:g}")
    return 0 if rep.all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
