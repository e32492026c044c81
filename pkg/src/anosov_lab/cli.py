"""Config-driven experiment runner.

    anosov-lab run config.json [--tasks a,b] [--out DIR] [--workers N] [-v]

A run writes ``report.json`` and ``tables/*.csv`` into the output directory.
Exit codes: 0 all checks passed, 1 some check failed, 2 config error,
3 a task raised.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AnosovLabError, ConfigError
from .torus_maps import AnosovMap, TrigTerm, linear_eigen, validate

log = logging.getLogger("anosov_lab")

SCHEMA_VERSION = 1
TASKS = ("validate", "splitting", "periodic", "zeta", "entropy", "pressure", "bowen",
         "integrability", "margulis", "resonances", "crosscheck")

DEFAULT_BUDGETS = {
    "n_max": 12,  # curve growth and entropy fit
    "period_cap": 10,  # largest period for counts, zeta and determinants
    "pressure_period": 8,
    "bowen_period": 10,
    "integrability_period": 6,
    "K": 8,
    "Ks": [6, 8, 10],
    "quad_n": 48,
    "eigs": 12,
    "points": 20_000_000,
    "grid_n": 16,
    "base_points": 10,
    "delta": 0.05,
    "margulis_n": [8, 12],
    "rect_radius": 0.05,
    "local_product_n": 10,
    "local_product_period": 8,
}

LINEAR_TOLERANCES = {
    "frame": 1e-10,
    "entropy": 1e-6,  # on lambda_u
    "pressure": 1e-3,  # on lambda_u
    "spectrum": 1e-10,  # on lambda_u
    "crosscheck": 1e-3,  # spread of the ln lambda_u estimates
    "residual": 1e-8,
    "local_product": 1e-2,
    "projector": 1e-6,
    "determinant": 1e-4,
}

PERTURBED_TOLERANCES = {
    "frame": 1e-8,  # invariance of e_s, e_c
    "frame_u": 1e-6,
    "entropy": 0.03,  # on ln lambda_u
    "pressure": 0.03,
    "spectrum": 0.03,
    "crosscheck": 0.03,
    "local_product": 3e-2,
    "projector": 3e-2,
    "determinant": 1e-4,
    "omega": 3e-6,
    "drift": 1e-3,
    "gap": 0.2,
    "witness": 1e-2,
    "mass_step": 1e-2,
    "integrability": 1e-4,
}

OBSERVABLES = [("cos", (1, 0, 0)), ("cos", (0, 2, 1)), ("sin", (3, -1, 2))]
DET_POINTS = [0.05, -0.1, 0.15, 0.1j, 0.08 + 0.08j]


# -- config ------------------------------------------------------------------------

@dataclass
class RunConfig:
    matrix: list
    perturbation: list
    epsilon: float
    tasks: list
    budgets: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    def build_map(self) -> AnosovMap:
        terms = tuple(TrigTerm(tuple(t["wavevector"]), tuple(t["amplitude"]), float(t.get("phase", 0.0)))
                      for t in self.perturbation)
        return AnosovMap(np.array(self.matrix), terms, float(self.epsilon))

    @property
    def linear(self) -> bool:
        return self.epsilon == 0.0 or not self.perturbation

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _require(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def parse_config(doc: dict) -> RunConfig:
    _require(isinstance(doc, dict), "$", "config must be a JSON object")
    _require(doc.get("schema_version") == SCHEMA_VERSION, "schema_version",
             f"expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    known = {"schema_version", "map", "tasks", "budgets", "tolerances", "output_dir", "seed"}
    extra = sorted(set(doc) - known)
    _require(not extra, "$", f"unknown fields {extra}")

    m = doc.get("map")
    _require(isinstance(m, dict), "map", "missing or not an object")
    A = m.get("matrix")
    _require(isinstance(A, list) and len(A) == 3 and all(isinstance(r, list) and len(r) == 3 for r in A),
             "map.matrix", "must be a 3x3 list of integers")
    for i, row in enumerate(A):
        for j, v in enumerate(row):
            _require(isinstance(v, int) and not isinstance(v, bool), f"map.matrix[{i}][{j}]", "must be an integer")
    det = round(np.linalg.det(np.array(A, dtype=float)))
    _require(abs(det) == 1, "map.matrix", f"|det| must be 1, got {det}")
    w = np.linalg.eigvals(np.array(A, dtype=float))
    w = np.sort(w.real) if np.all(np.abs(w.imag) < 1e-12) else None
    # the toolkit orders the splitting by eigenvalue: 0 < l_s < 1 < l_c < l_u
    _require(w is not None and w[0] > 0 and w[0] < 1 - 1e-9 and 1 + 1e-9 < w[1] < w[2] - 1e-9,
             "map.matrix", "eigenvalues must be real with 0 < l_s < 1 < l_c < l_u")
    eps = m.get("epsilon", 0.0)
    _require(isinstance(eps, (int, float)) and not isinstance(eps, bool) and math.isfinite(eps) and eps >= 0,
             "map.epsilon", "must be a finite number >= 0")
    pert = m.get("perturbation", [])
    _require(isinstance(pert, list), "map.perturbation", "must be a list")
    for i, t in enumerate(pert):
        p = f"map.perturbation[{i}]"
        _require(isinstance(t, dict), p, "must be an object")
        _require(set(t) <= {"wavevector", "amplitude", "phase"}, p, f"unknown fields {sorted(set(t) - {'wavevector', 'amplitude', 'phase'})}")
        for key in ("wavevector", "amplitude"):
            _require(isinstance(t.get(key), list) and len(t[key]) == 3, f"{p}.{key}", "must be a list of 3 numbers")
        _require(all(isinstance(v, int) for v in t["wavevector"]) and any(t["wavevector"]),
                 f"{p}.wavevector", "must be a nonzero integer vector")

    tasks = doc.get("tasks")
    _require(isinstance(tasks, list), "tasks", "must be a list")
    _require(len(tasks) > 0, "tasks", "task list is empty")
    for i, name in enumerate(tasks):
        _require(name in TASKS, f"tasks[{i}]", f"unknown task {name!r}; expected one of {list(TASKS)}")

    budgets = dict(DEFAULT_BUDGETS)
    b = doc.get("budgets", {})
    _require(isinstance(b, dict), "budgets", "must be an object")
    for k, v in b.items():
        _require(k in DEFAULT_BUDGETS, f"budgets.{k}", "unknown budget")
        vals = v if isinstance(v, list) else [v]
        _require(len(vals) > 0 and all(isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 for x in vals),
                 f"budgets.{k}", "must be positive")
        _require(isinstance(v, list) == isinstance(DEFAULT_BUDGETS[k], list), f"budgets.{k}",
                 "list/scalar mismatch with the schema")
        budgets[k] = v
    _require(budgets["quad_n"] >= 4 * max(budgets["Ks"] + [budgets["K"]]) + 4, "budgets.quad_n",
             "must be >= 4K+4 for the largest K")

    linear = eps == 0 or not pert
    tol = dict(LINEAR_TOLERANCES if linear else PERTURBED_TOLERANCES)
    t = doc.get("tolerances", {})
    _require(isinstance(t, dict), "tolerances", "must be an object")
    for k, v in t.items():
        _require(k in tol, f"tolerances.{k}", f"unknown tolerance; expected one of {sorted(tol)}")
        _require(isinstance(v, (int, float)) and v > 0, f"tolerances.{k}", "must be positive")
        tol[k] = float(v)

    seed = doc.get("seed", 0)
    _require(isinstance(seed, int) and seed >= 0, "seed", "must be a nonnegative integer")
    out = doc.get("output_dir", "out")
    _require(isinstance(out, str) and out, "output_dir", "must be a nonempty string")
    cfg = RunConfig(A, pert, float(eps), list(tasks), budgets, tol, out, seed, copy.deepcopy(doc))
    try:
        cfg.build_map()
    except ValueError as exc:
        raise ConfigError(f"map: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"$: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(doc)


# -- report pieces -----------------------------------------------------------------

OPS = {"<": lambda v, t: v < t, "<=": lambda v, t: v <= t, ">": lambda v, t: v > t,
       "==": lambda v, t: v == t, "in": lambda v, t: v in t}


def check(name, value, op, threshold) -> dict:
    """One acceptance flag; ``passed`` is recomputable from the other fields."""
    return {"name": name, "value": value, "op": op, "threshold": threshold,
            "passed": bool(OPS[op](value, threshold))}


def _table(columns, rows) -> dict:
    return {"columns": list(columns), "rows": [list(r) for r in rows]}


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    return obj


def _observables():
    from .thermo import TrigObservable
    return [getattr(TrigObservable, kind)(q) for kind, q in OBSERVABLES]


def _base_points(cfg: RunConfig, count: int) -> np.ndarray:
    return np.random.default_rng(cfg.seed).random((count, 3))


# -- tasks -------------------------------------------------------------------------

def task_validate(cfg, fmap):
    rep = validate(fmap, grid_n=2 * cfg.budgets["grid_n"], raise_on_fail=False)
    checks = [check(f"cone_{k}", float(v), "<", 1.0) for k, v in sorted(rep.cone_ratios.items())]
    checks.append(check("min_det", float(rep.min_det), ">", 0.0))
    return {"values": rep.as_dict(), "checks": checks}


def task_splitting(cfg, fmap):
    from .splitting import rate_bounds, splitting_frames
    bounds = rate_bounds(fmap, cfg.budgets["grid_n"])
    X = _base_points(cfg, 8)
    fb = splitting_frames(fmap, X)
    tol = cfg.tolerances
    checks = [check(f"margin_{k}", float(v), ">", 0.0) for k, v in sorted(bounds["margins"].items())]
    values = {"rate_bounds": bounds}
    if cfg.linear:
        ev = linear_eigen(fmap.A).right
        err = 0.0
        for i, e in enumerate((fb.e_s, fb.e_c, fb.e_u)):
            ref = ev[:, i] / np.linalg.norm(ev[:, i])
            err = max(err, float(np.max(np.minimum(np.linalg.norm(e - ref, axis=1),
                                                    np.linalg.norm(e + ref, axis=1)))))
        values["frame_error"] = err
        checks.append(check("frame_error", err, "<", tol["frame"]))
    else:
        Y = fmap.eval(X)
        fy = splitting_frames(fmap, Y)
        J = fmap.jacobian(X)
        for name, e, r, ey, t in (("s", fb.e_s, fb.rate_s, fy.e_s, tol["frame"]),
                                  ("c", fb.e_c, fb.rate_c, fy.e_c, tol["frame"]),
                                  ("u", fb.e_u, fb.rate_u, fy.e_u, tol["frame_u"])):
            img = np.einsum("nij,nj->ni", J, e)
            res = np.minimum(np.linalg.norm(img - r[:, None] * ey, axis=1),
                             np.linalg.norm(img + r[:, None] * ey, axis=1))
            values[f"invariance_{name}"] = float(res.max())
            checks.append(check(f"invariance_{name}", float(res.max()), "<", t))
    rows = [[*X[i], *fb.e_s[i], *fb.e_c[i], *fb.e_u[i], fb.rate_s[i], fb.rate_c[i], fb.rate_u[i]]
            for i in range(len(X))]
    cols = ["x1", "x2", "x3"] + [f"e{k}_{j}" for k in "scu" for j in (1, 2, 3)] + ["rate_s", "rate_c", "rate_u"]
    return {"values": values, "checks": checks, "tables": {"frames": _table(cols, rows)}}


def task_periodic(cfg, fmap):
    from .periodic import lefschetz_count, linear_periodic_points, periodic_points
    rows, checks = [], []
    cap = cfg.budgets["period_cap"]
    for n in range(1, cap + 1):
        if fmap.is_linear:
            ps = linear_periodic_points(fmap.A, n, budget=cfg.budgets["points"])
        else:
            ps = periodic_points(fmap, n, budget=cfg.budgets["points"])
        lef = lefschetz_count(fmap.A, n)
        rows.append([n, len(ps), lef, ps.max_residual, ps.conjugacy_estimate])
        checks.append(check(f"card_F{n}", len(ps), "==", lef))
    return {"values": {"card_F": [r[1] for r in rows], "max_residual": max(r[3] for r in rows)},
            "checks": checks,
            "tables": {"counts": _table(["n", "card", "lefschetz", "max_residual", "conjugacy_estimate"], rows)}}


def task_zeta(cfg, fmap):
    from .thermo import determinant_series, zeta_exact, zeta_series, zeta_taylor_from_counts
    N = cfg.budgets["period_cap"]
    counts = zeta_series(fmap, N, budget=cfg.budgets["points"])
    ze = zeta_exact(fmap.A)
    taylor = zeta_taylor_from_counts(counts)
    exact = ze.taylor(N)
    D = [determinant_series(fmap, k, N, budget=cfg.budgets["points"]) for k in range(4)]
    rows, worst, worst_rec = [], 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for z in map(complex, DET_POINTS):
            zeta, d = complex(ze(z)), [complex(Dk(z)) for Dk in D]
            lhs, rhs = zeta * d[0] * d[2], d[1] * d[3]
            rel = abs(lhs - rhs) / abs(rhs)
            # the orientation consistent with the count series
            rel_rec = abs(zeta * d[1] * d[3] - d[0] * d[2]) / abs(d[0] * d[2])
            worst, worst_rec = max(worst, rel), max(worst_rec, rel_rec)
            rows.append([z.real, z.imag, lhs.real, lhs.imag, rhs.real, rhs.imag, rel, rel_rec])
    checks = [check("taylor_matches_exact", taylor == exact, "==", True),
              check("determinant_identity", worst, "<", cfg.tolerances["determinant"]),
              check("determinant_identity_count_orientation", worst_rec, "<", cfg.tolerances["determinant"])]
    values = {"card_F": counts, "taylor": taylor, "exact_taylor": exact,
              "numerator_poly": list(ze.numerator_poly), "denominator_poly": list(ze.denominator_poly),
              "poles": list(ze.denominator_roots), "identity_rel_error": worst,
              "count_orientation_rel_error": worst_rec}
    return {"values": values, "checks": checks,
            "tables": {"determinant_identity": _table(["re_z", "im_z", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "rel_error",
                                                          "rel_error_count_orientation"], rows)}}


def _target(fmap):
    lam_u = float(linear_eigen(fmap.A).values[2])
    return lam_u, float(np.log(lam_u))


def task_entropy(cfg, fmap):
    from .unstable_geometry import curve_lengths, entropy_estimate
    lam_u, ln_u = _target(fmap)
    b = cfg.budgets
    X = _base_points(cfg, b["base_points"])
    est = entropy_estimate(fmap, X[0], b["delta"], b["n_max"])
    tol = cfg.tolerances
    if cfg.linear:
        checks = [check("entropy_vs_lambda_u", abs(math.exp(est.value) - lam_u), "<", tol["entropy"])]
    else:
        checks = [check("entropy_vs_ln_lambda_u", abs(est.value - ln_u), "<", tol["entropy"])]
    # normalized lengths lambda_u^-n L_n / L_0 over random base points
    ns = np.arange(b["n_max"] + 1)
    rows, lo, hi, step = [], math.inf, 0.0, 0.0
    for i, x in enumerate(X):
        _, L, _, _ = curve_lengths(fmap, x, b["delta"], b["n_max"])
        r = np.asarray(L) * lam_u ** (-ns.astype(float)) / L[0]
        for n in ns:
            rows.append([i, int(n), float(L[n]), float(r[n])])
        lo, hi = min(lo, float(r[2:].min())), max(hi, float(r[2:].max()))
        step = max(step, float(abs(r[-1] / r[-2] - 1.0)))
    values = {**est.as_dict(), "C1": lo, "C2": hi, "last_step_change": step}
    checks.append(check("C1_positive", lo, ">", 0.0))
    checks.append(check("C2_finite", hi, "<", math.inf))
    if not cfg.linear:
        checks.append(check("normalized_length_settled", step, "<", tol["mass_step"]))
    return {"values": values, "checks": checks,
            "tables": {"lengths": _table(["base", "n", "length", "normalized"], rows)}}


def task_pressure(cfg, fmap):
    from .thermo import pressure_estimate
    lam_u, ln_u = _target(fmap)
    ps = pressure_estimate(fmap, cfg.budgets["pressure_period"], budget=cfg.budgets["points"])
    tol = cfg.tolerances["pressure"]
    if cfg.linear:
        checks = [check("exp_pressure_vs_lambda_u", abs(math.exp(ps.limit) - lam_u), "<", tol)]
    else:
        checks = [check("pressure_vs_ln_lambda_u", abs(ps.limit - ln_u), "<", tol)]
    rows = []
    for (n, lz), (_, per) in zip(ps.log_partition, ps.per_period):
        ratio = dict(ps.ratio_values).get(n, float("nan"))
        rows.append([n, lz, per, ratio])
    return {"values": ps.as_dict(), "checks": checks,
            "tables": {"series": _table(["n", "log_Z", "per_period", "ratio"], rows)}}


def task_bowen(cfg, fmap):
    from .thermo import bowen_measure
    n = cfg.budgets["bowen_period"]
    rows, values = [], {}
    for g in _observables():
        est = bowen_measure(fmap, n, g, budget=cfg.budgets["points"])
        values[g.name] = est.as_dict()
        rows.append([g.name, n, est.value, est.prev_value, est.raw, est.raw_one])
    checks = []
    if cfg.linear:
        worst = max(abs(v["value"]) for v in values.values())
        checks.append(check("haar_orthogonality", worst, "<", cfg.tolerances["projector"]))
    return {"values": values, "checks": checks,
            "tables": {"averages": _table(["observable", "period", "value", "prev_value", "raw", "raw_one"], rows)}}


def task_integrability(cfg, fmap):
    from .thermo import integrability_test
    tol = cfg.tolerances.get("integrability", 1e-4)
    res = integrability_test(fmap, cfg.budgets["integrability_period"], tol=tol, budget=cfg.budgets["points"])
    if cfg.linear:
        checks = [check("verdict", res.verdict, "==", "JointlyIntegrable"),
                  check("spread", res.spread, "==", 0.0)]
    else:
        checks = [check("verdict", res.verdict, "in", ["NotJointlyIntegrable", "Inconclusive"])]
    return {"values": res.as_dict(), "checks": checks,
            "tables": {"spread": _table(["n", "spread"], res.per_period_spread)}}


def task_margulis(cfg, fmap):
    from .margulis import (center_leaf_point, cs_invariance_residual, local_product_residual,
                           omega_center_density, u_density_iterate, u_invariance_residual,
                           u_scaling_residual)
    from .unstable_geometry import rectangle
    b, tol = cfg.budgets, cfg.tolerances
    x = _base_points(cfg, 1)[0]
    n_lo, n_hi = b["margulis_n"][0], b["margulis_n"][-1]
    r = b["rect_radius"]
    values, checks, rows = {}, [], []

    scal = {}
    for n in (n_lo, n_hi):
        d = u_density_iterate(fmap, x, r, n, cells=10)
        scal[n] = u_scaling_residual(fmap, d)
        rows.append(["u_scaling", n, r, scal[n]])
    values["u_scaling"] = {str(k): v for k, v in scal.items()}

    res = {}
    for kind, fn in (("cs", cs_invariance_residual), ("u", u_invariance_residual)):
        for rad in (r, r / 2):
            R = rectangle(fmap, x, rad, rad)
            for n in (n_lo, n_hi):
                v = fn(fmap, R, n).value
                res[(kind, rad, n)] = v
                rows.append([f"{kind}_invariance", n, rad, v])
    values["invariance"] = [{"kind": k, "radius": rad, "n": n, "value": v} for (k, rad, n), v in res.items()]

    R = rectangle(fmap, x, r, r)
    lp, info = local_product_residual(fmap, R, n=b["local_product_n"], period=b["local_product_period"],
                                      return_info=True)
    values["local_product"] = {"value": lp, **info}
    rows.append(["local_product", b["local_product_n"], r, lp])

    z = R.center
    y1, y2 = center_leaf_point(fmap, z, 0.01), center_leaf_point(fmap, z, 0.02)
    w1, w2, w12 = omega_center_density(fmap, z, y1), omega_center_density(fmap, z, y2), omega_center_density(fmap, y1, y2)
    cocycle = abs(w1 + w12 - w2)
    values["omega"] = {"z_y1": w1, "z_y2": w2, "y1_y2": w12, "cocycle_error": cocycle}

    if cfg.linear:
        worst = max([*scal.values(), *res.values()])
        checks.append(check("residuals_exact", worst, "<", tol["residual"]))
        checks.append(check("omega_zero", max(abs(w1), abs(w2), abs(w12)), "<", tol["residual"]))
    else:
        checks.append(check("u_scaling_decreases", scal[n_hi] - scal[n_lo], "<", 0.0))
        for kind in ("cs", "u"):
            for rad in (r, r / 2):
                checks.append(check(f"{kind}_decreases_in_n_r{rad:g}",
                                    res[(kind, rad, n_hi)] - res[(kind, rad, n_lo)], "<", 0.0))
            for n in (n_lo, n_hi):
                checks.append(check(f"{kind}_decreases_in_radius_n{n}",
                                    res[(kind, r / 2, n)] - res[(kind, r, n)], "<", 0.0))
        checks.append(check("omega_cocycle", cocycle, "<", tol["omega"]))
    checks.append(check("local_product", lp, "<", tol["local_product"]))
    return {"values": values, "checks": checks,
            "tables": {"residuals": _table(["quantity", "n", "radius", "value"], rows)}}


def task_resonances(cfg, fmap):
    from .resonances import (assemble_transfer, co_resonant_state, leading_spectrum,
                             no_jordan_witness, projector_trace_measure, spectrum_across_truncations)
    b, tol = cfg.budgets, cfg.tolerances
    lam_u, ln_u = _target(fmap)
    Ks = [int(k) for k in b["Ks"]]
    spec = spectrum_across_truncations(fmap, 2, Ks, b["eigs"], b["quad_n"], seed=cfg.seed)
    ev = spec.eigenvalues
    stable = [i for i, c in enumerate(spec.classification) if c == "stable"]
    lead = complex(ev[0])
    nxt = [abs(ev[i]) for i in stable if i != 0]
    gap = abs(lead) - (max(nxt) if nxt else 0.0)
    T = assemble_transfer(fmap, 2, int(b["K"]), b["quad_n"])
    right = leading_spectrum(T, b["eigs"], seed=cfg.seed)
    left = leading_spectrum(T, b["eigs"], left=True, seed=cfg.seed)
    witness = no_jordan_witness(right.vectors[0], left.vectors[0])
    _, nu = co_resonant_state(fmap, int(b["K"]), b["quad_n"], seed=cfg.seed)
    proj = {g.name: projector_trace_measure(right.vectors[0], nu, g) for g in _observables()}
    values = {"leading": lead, "gap": gap, "drift": float(spec.stability[0]), "witness": witness,
              "ln_leading": math.log(abs(lead)), "projector": proj, "Ks": Ks}
    checks = [check("leading_real", abs(lead.imag), "<", 1e-8),
              check("leading_positive", lead.real, ">", 0.0)]
    if cfg.linear:
        checks.append(check("leading_vs_lambda_u", abs(lead.real - lam_u), "<", tol["spectrum"]))
        checks.append(check("projector_haar", max(abs(v) for v in proj.values()), "<", tol["projector"]))
    else:
        checks += [check("leading_vs_ln_lambda_u", abs(math.log(abs(lead)) - ln_u), "<", tol["spectrum"]),
                   check("drift", float(spec.stability[0]), "<", tol["drift"]),
                   check("gap", gap, ">", tol["gap"]),
                   check("no_jordan_witness", witness, ">", tol["witness"])]
    rows = []
    for K, s in spec.info["per_K"].items():
        for i, lam in enumerate(s):
            rows.append([K, i, lam.real, lam.imag, abs(lam), "", ""])
    for i, lam in enumerate(ev):
        rows.append(["drift", i, lam.real, lam.imag, abs(lam), float(spec.stability[i]), spec.classification[i]])
    return {"values": values, "checks": checks,
            "tables": {"spectrum": _table(["K", "index", "re", "im", "modulus", "drift", "class"], rows)}}


def task_crosscheck(cfg, fmap, blocks=None):
    """Three independent ln lambda_u estimates and projector vs Bowen."""
    blocks = blocks or {}

    def values_of(name, fn):
        blk = blocks.get(name)
        if blk is not None and blk.get("status") == "ok":
            return blk["values"]
        return _clean(fn(cfg, fmap)["values"])

    _, ln_u = _target(fmap)
    ent = values_of("entropy", task_entropy)["value"]
    pre = values_of("pressure", task_pressure)["limit"]
    res = values_of("resonances", task_resonances)
    spec = res["ln_leading"]
    est = {"entropy": ent, "pressure": pre, "spectrum": spec}
    spread = max(est.values()) - min(est.values())
    tol = cfg.tolerances["crosscheck"]
    checks = [check("mutual_spread", spread, "<", tol)]
    for k, v in est.items():
        checks.append(check(f"{k}_vs_ln_lambda_u", abs(v - ln_u), "<", tol))
    bow = values_of("bowen", task_bowen)
    rows, worst = [], 0.0
    for name, pv in res["projector"].items():
        bv = bow[name]["value"]
        worst = max(worst, abs(pv - bv))
        rows.append([name, pv, bv, abs(pv - bv)])
    checks.append(check("projector_vs_bowen", worst, "<", cfg.tolerances["projector"]))
    return {"values": {"ln_lambda_u": ln_u, "estimates": est, "spread": spread, "projector_vs_bowen": worst},
            "checks": checks,
            "tables": {"measures": _table(["observable", "projector", "bowen", "difference"], rows),
                       "ln_lambda_u": _table(["route", "estimate", "error"],
                                             [[k, v, v - ln_u] for k, v in est.items()])}}


TASK_FUNCS = {
    "validate": task_validate, "splitting": task_splitting, "periodic": task_periodic,
    "zeta": task_zeta, "entropy": task_entropy, "pressure": task_pressure, "bowen": task_bowen,
    "integrability": task_integrability, "margulis": task_margulis, "resonances": task_resonances,
}


def _run_task(cfg: RunConfig, name: str) -> dict:
    """Run one task in isolation; errors become an error block."""
    fmap = cfg.build_map()
    try:
        out = TASK_FUNCS[name](cfg, fmap)
    except Exception as exc:  # noqa: BLE001 - every failure is reported per task
        log.error("task %s failed: %s", name, exc)
        kind = "domain" if isinstance(exc, AnosovLabError) else "internal"
        return {"status": "error", "error": {"type": type(exc).__name__, "kind": kind, "message": str(exc),
                                             "trace": traceback.format_exc(limit=3).splitlines()[-1]}}
    return {"status": "ok", **_clean(out)}


# -- orchestration -----------------------------------------------------------------

@dataclass
class Report:
    header: dict
    blocks: dict

    @property
    def errors(self) -> list:
        return [k for k, b in self.blocks.items() if b["status"] == "error"]

    @property
    def failed_checks(self) -> list:
        return [f"{k}.{c['name']}" for k, b in self.blocks.items() for c in b.get("checks", []) if not c["passed"]]

    @property
    def exit_code(self) -> int:
        if self.errors:
            return 3
        return 1 if self.failed_checks else 0

    def as_dict(self) -> dict:
        blocks = {}
        for k, b in self.blocks.items():
            b = {kk: vv for kk, vv in b.items() if kk != "tables"}
            if self.blocks[k].get("tables"):
                b["tables"] = [f"tables/{k}_{t}.csv" for t in sorted(self.blocks[k]["tables"])]
            blocks[k] = b
        return {**self.header, "tasks": blocks,
                "summary": {"all_passed": self.exit_code == 0, "errors": self.errors,
                            "failed_checks": self.failed_checks, "exit_code": self.exit_code}}


def run(cfg: RunConfig, tasks=None, workers: int = 1) -> Report:
    """Execute the selected tasks in dependency order.

    Independent tasks may run in worker processes; crosscheck runs last
    and reuses the blocks of the tasks it depends on when they ran.
    """
    sel = list(tasks) if tasks is not None else cfg.tasks
    if not sel:
        raise ConfigError("tasks: task list is empty")
    for t in sel:
        if t not in TASKS:
            raise ConfigError(f"tasks: unknown task {t!r}")
    order = [t for t in TASKS if t in sel]
    plain = [t for t in order if t != "crosscheck"]
    blocks: dict = {}
    if workers > 1 and len(plain) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {t: pool.submit(_run_task, cfg, t) for t in plain}
            for t in plain:
                blocks[t] = futs[t].result()
    else:
        for t in plain:
            log.info("running %s", t)
            blocks[t] = _run_task(cfg, t)
    if "crosscheck" in order:
        log.info("running crosscheck")
        fmap = cfg.build_map()
        try:
            blocks["crosscheck"] = {"status": "ok", **_clean(task_crosscheck(cfg, fmap, blocks))}
        except Exception as exc:  # noqa: BLE001
            blocks["crosscheck"] = {"status": "error", "error": {"type": type(exc).__name__, "message": str(exc)}}
    header = {"schema_version": SCHEMA_VERSION, "version": __version__, "config_hash": cfg.config_hash(),
              "seed": cfg.seed, "tasks_run": order}
    return Report(header, {t: blocks[t] for t in order})


def emit(report: Report, out_dir, fmt: str = "both") -> list:
    """Write report.json and/or one CSV per table; returns the paths written."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt in ("json", "both"):
            p = out / "report.json"
            p.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
        if fmt in ("csv-bundle", "both"):
            tdir = out / "tables"
            tdir.mkdir(exist_ok=True)
            for k, b in report.blocks.items():
                for name, tab in sorted(b.get("tables", {}).items()):
                    p = tdir / f"{k}_{name}.csv"
                    with open(p, "w", newline="") as fh:
                        w = csv.writer(fh, lineterminator="\n")
                        w.writerow(tab["columns"])
                        w.writerows([[repr(v) if isinstance(v, float) else v for v in r] for r in tab["rows"]])
                    written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="anosov-lab")
    sub = parser.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run the tasks of a JSON config")
    pr.add_argument("config")
    pr.add_argument("--tasks", help="comma-separated subset of the config's tasks")
    pr.add_argument("--out", help="output directory (overrides output_dir)")
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        tasks = None
        if args.tasks:
            tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
            missing = [t for t in tasks if t not in cfg.tasks]
            if missing:
                raise ConfigError(f"--tasks: {missing} not in the config's task list")
        if args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
        report = run(cfg, tasks, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        emit(report, args.out or cfg.output_dir)
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    summary = report.as_dict()["summary"]
    for k, b in report.blocks.items():
        if b["status"] == "error":
            print(f"{k}: ERROR {b['error']['type']}: {b['error']['message']}")
        else:
            n_fail = sum(not c["passed"] for c in b.get("checks", []))
            print(f"{k}: {'ok' if n_fail == 0 else f'{n_fail} check(s) failed'}")
    print(f"exit {summary['exit_code']}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
