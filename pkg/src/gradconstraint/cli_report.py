"""Config-driven command line front end.

Each subcommand reads one YAML experiment file, validates every descriptor
before computing, writes CSV dumps and a JSON report into the output
directory and exits with 0 (all checks pass), 1 (a check failed) or 2
(invalid input).

Config schema::

    body:        {kind: euclidean_ball, dim: 2}      # any make_body descriptor
    domain:      {kind: disk, R: 3.0}
    data:        {kind: zero}                         # boundary data phi
    integrand:   {kind: torsion}
    grid:        {h: 0.046875}                        # or {n: 129} nodes across
    schedule:    {levels: 6, eps0: 0.1}
    direct:      {delta: 1.0e-5}
    tolerances:  {tau_contact: ..., tol_grad: ...}    # optional overrides
    validation:  strict_interior                      # or transversal
    checks:      {n_points: 1000, tol: 1.0e-8, n_traces: 0}
    output:      out/disk_torsion
    seed:        0
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import minimize_scalar

from .convex_body import make_body
from .geometry import make_boundary_data, make_domain, validate_boundary_data
from .hj_field import (
    LABEL_NAMES,
    classify_ridge,
    rho_bar_field,
    rho_field,
    ridge_scan,
    trace_characteristic,
)
from .obstacle_solver import (
    Grid,
    SolverError,
    classify_and_verify,
    default_schedule,
    make_integrand,
    penalization_bounds,
    prepare_fields,
    ridge_mask,
    solve_double_obstacle,
    solve_gradient_constrained,
)

log = logging.getLogger(__name__)

PASS, FAIL, INPUT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    """The experiment file is malformed or fails validation."""


# ---------------------------------------------------------------------------
# config


class Experiment:
    """Validated objects built from a config mapping."""

    def __init__(self, cfg, base_dir=Path(".")):
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a mapping")
        self.cfg = cfg
        self.seed = int(cfg.get("seed", 0))
        try:
            self.body = make_body(cfg["body"]) if "body" in cfg else make_body({"kind": "euclidean_ball", "dim": 2})
            self.domain = make_domain(cfg["domain"]) if "domain" in cfg else None
            self.data = make_boundary_data(cfg.get("data", {"kind": "zero"}))
            self.integrand = make_integrand(cfg.get("integrand", {"kind": "torsion"}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid descriptor: {exc}") from exc
        out = cfg.get("output", "out")
        self.output = Path(out) if Path(out).is_absolute() else base_dir / out
        self.checks = {"n_points": 1000, "tol": 1e-8, "n_traces": 0, **(cfg.get("checks") or {})}
        self.tolerances = cfg.get("tolerances") or None

    def need_domain(self):
        if self.domain is None:
            raise ConfigError("this command needs a 'domain' section")
        mode = self.cfg.get("validation", "strict_interior")
        try:
            rep = validate_boundary_data(self.domain, self.data, self.body, mode=mode, seed=self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not rep.ok:
            raise ConfigError(f"boundary data rejected ({mode}): {rep.message}")
        return rep

    def grid(self):
        g = self.cfg.get("grid") or {}
        if "h" in g:
            h = float(g["h"])
        elif "n" in g:
            lo, hi = self.domain.box
            h = float(np.max(np.asarray(hi) - np.asarray(lo))) / (int(g["n"]) - 1)
        else:
            raise ConfigError("grid needs 'h' or 'n'")
        if not h > 0:
            raise ConfigError("grid spacing must be positive")
        return Grid.cover(self.domain, h)

    def schedule(self):
        s = self.cfg.get("schedule") or {}
        return default_schedule(int(s.get("levels", 6)), float(s.get("eps0", 0.1)))


def load_config(path):
    path = Path(path)
    try:
        cfg = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return Experiment(cfg, path.parent)


# ---------------------------------------------------------------------------
# report writing


def _round(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if not np.isfinite(v) else float(f"{v:.12g}")
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_round(x) for x in v]
    if isinstance(v, dict):
        return {k: _round(x) for k, x in v.items()}
    return v


def entry(name, value, tolerance, passed, anchor):
    """One report line; ``passed`` is None for informational values."""
    return {"name": name, "value": _round(value), "tolerance": _round(tolerance),
            "pass": None if passed is None else bool(passed), "paper_anchor": anchor}


def write_report(path, command, entries, extra=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    failed = [e["name"] for e in entries if e["pass"] is False]
    doc = {"command": command, "pass": not failed, "failed": failed, "checks": entries}
    if extra:
        doc["info"] = _round(extra)

    def clean(o):
        # JSON has no NaN/inf; report them as strings
        if isinstance(o, float) and not np.isfinite(o):
            return str(o)
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, list):
            return [clean(v) for v in o]
        return o

    path.write_text(json.dumps(clean(doc), indent=2, sort_keys=False) + "\n")
    return not failed


def write_csv(path, header, columns):
    """Columns of equal length; floats at 17 significant digits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.17g}"
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


# ---------------------------------------------------------------------------
# commands


def _polar_by_maximization(body, y, n_dirs=4096):
    """``max_x <x, y> / gamma(x)`` over unit directions, refined per point."""
    th = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
    X = np.stack([np.cos(th), np.sin(th)], axis=-1)
    ratio = (y @ X.T) / body.gauge(X)[None, :]
    out = np.empty(len(y))
    step = 2 * np.pi / n_dirs
    for i, j in enumerate(np.argmax(ratio, axis=1)):
        def f(t, yi=y[i]):
            x = np.array([np.cos(t), np.sin(t)])
            return -(x @ yi) / body.gauge(x)
        r = minimize_scalar(f, bounds=(th[j] - step, th[j] + step), method="bounded",
                            options={"xatol": 1e-12})
        out[i] = max(-r.fun, ratio[i, j])
    return out


def body_checks(body, n=1000, tol=1e-8, seed=0):
    """Gauge identities on random points as report entries."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, body.dim)) * rng.uniform(0.2, 5.0, (n, 1))
    y = rng.standard_normal((n, body.dim))
    t = rng.uniform(0.1, 10.0, (n, 1))
    g = body.gauge(x)
    out = [entry("C0_C1", list(body.bounds), None, None, "gauge bounds")]
    hom = np.max(np.abs(body.gauge(t * x) - t[:, 0] * g) / (1 + t[:, 0] * g))
    out.append(entry("homogeneity", hom, tol, hom <= tol, "one-homogeneity of the gauge"))
    cs = np.max(np.sum(x * y, axis=1) - g * body.polar_gauge(y))
    out.append(entry("cauchy_schwarz", cs, tol, cs <= tol, "generalized Cauchy-Schwarz"))
    if body.dim == 2:
        yy = y[:50]
        ref = _polar_by_maximization(body, yy)
        err = np.max(np.abs(body.polar_gauge(yy) - ref) / np.maximum(ref, 1.0))
        out.append(entry("polar_vs_maximization", err, 1e-6, err <= 1e-6, "polar gauge as support function"))
    names = ["polar_of_gradient", "polar_gradient_inverse", "euler", "hessian_kernel",
             "hessian_homogeneity"]
    if not body.smooth:
        out += [entry(nm, "not applicable", tol, None, "nonsmooth body") for nm in names]
        return out
    Dg = body.gauge_grad(x)
    H = body.gauge_hess(x)
    e1 = np.max(np.abs(body.polar_gauge(Dg) - 1))
    e2 = np.max(np.abs(body.polar_grad(Dg) - x / g[:, None]))
    e3 = np.max(np.abs(np.sum(Dg * x, axis=1) - g))
    e4 = np.max(np.abs(np.einsum("nij,nj->ni", H, x)) / (1 + np.abs(H).max(axis=(1, 2))[:, None]))
    e5 = np.max(np.abs(body.gauge_hess(t[:, :, None] * x[:, None, :])[:, 0] * t[:, :, None] - H)
                / (1 + np.abs(H)))
    for nm, v, anchor in zip(names, [e1, e2, e3, e4, e5],
                             ["gradient lies on the polar boundary", "inverse of the gradient map",
                              "Euler identity", "Hessian annihilates x", "Hessian homogeneity"]):
        out.append(entry(nm, v, tol, v <= tol, anchor))
    return out


def cmd_body_check(exp):
    entries = body_checks(exp.body, int(exp.checks["n_points"]), float(exp.checks["tol"]), exp.seed)
    ok = write_report(exp.output / "body_check.json", "body-check", entries,
                      {"body": exp.body.kind, "smoothness": exp.body.smoothness})
    return PASS if ok else FAIL


def _grid_points(exp):
    grid = exp.grid()
    P = grid.points.reshape(-1, 2)
    inside = exp.domain.inside(P)
    return grid, P[inside]


def cmd_field(exp):
    exp.need_domain()
    grid, X = _grid_points(exp)
    f = rho_field(exp.domain, exp.data, exp.body, X)
    fb = rho_bar_field(exp.domain, exp.data, exp.body, X)
    lab = classify_ridge(f, cell=grid.h)
    H = f.hess
    write_csv(exp.output / "field.csv",
              ["x1", "x2", "rho", "rho_bar", "mu1", "mu2", "detQ", "h11", "h12", "h22", "ridge_flag"],
              [X[:, 0], X[:, 1], f.rho, fb.rho, f.mu[:, 0], f.mu[:, 1], f.detQ,
               H[:, 0, 0], H[:, 0, 1], H[:, 1, 1], lab])
    finite = np.isfinite(f.rho).all() and np.isfinite(fb.rho).all()
    lip = float(np.max(exp.body.polar_gauge(f.mu[np.isfinite(f.mu).all(axis=1)])))
    entries = [
        entry("points", int(len(X)), None, None, "grid evaluation"),
        entry("values_finite", bool(finite), None, finite, "obstacle fields"),
        entry("warnings", int(f.warn.sum() + fb.warn.sum()), None, None, "closest-point search"),
        entry("ridge_nodes", int(np.sum(lab > 0)), None, None, "ridge"),
        entry("polar_of_gradient_max", lip, 1e-8, lip <= 1 + 1e-8, "gradient lies in the polar set"),
    ]
    return PASS if write_report(exp.output / "field.json", "field", entries) else FAIL


def cmd_ridge(exp):
    exp.need_domain()
    grid, X = _grid_points(exp)
    scan = ridge_scan(exp.domain, exp.data, exp.body, X, cell=grid.h)
    keep = scan.labels > 0
    xs, ys = list(scan.points[keep, 0]), list(scan.points[keep, 1])
    kinds = [LABEL_NAMES[k] for k in scan.labels[keep]]
    tstar = [np.nan] * len(xs)
    n_tr = int(exp.checks.get("n_traces", 0))
    fails = 0
    for z in (np.arange(n_tr) + 0.5) / max(n_tr, 1):
        try:
            tr = trace_characteristic(exp.domain, exp.data, exp.body, z)
        except (ValueError, RuntimeError) as exc:
            log.warning("trace from z=%.6f failed: %s", z, exc)
            fails += 1
            continue
        xs.append(tr.x_star[0])
        ys.append(tr.x_star[1])
        kinds.append("trace_" + tr.kind)
        tstar.append(tr.t_star)
    write_csv(exp.output / "ridge.csv", ["x1", "x2", "kind", "t_star"], [xs, ys, kinds, tstar])
    entries = [
        entry("ridge_nodes", int(keep.sum()), None, None, "ridge"),
        entry("ridge0_nodes", int(np.sum(scan.labels == 1)), None, None, "ridge of multiple closest points"),
        entry("hausdorff_ridge0_full", scan.hausdorff, 2 * grid.h, scan.hausdorff <= 2 * grid.h,
              "ridge is the closure of the multiple-closest-point set"),
        entry("trace_failures", fails, 0, fails == 0, "characteristics"),
    ]
    return PASS if write_report(exp.output / "ridge.json", "ridge", entries) else FAIL


def cmd_trace(exp, z):
    exp.need_domain()
    tr = trace_characteristic(exp.domain, exp.data, exp.body, z)
    write_csv(exp.output / f"trace_{z:.6f}.csv", ["t", "x1", "x2", "rho", "detQ"],
              [tr.t, tr.points[:, 0], tr.points[:, 1], tr.rho, tr.detQ])
    pos = bool(np.all(tr.detQ > 0))
    entries = [
        entry("detQ_positive_before_ridge", float(tr.detQ.min()) if tr.detQ.size else np.nan, 0.0, pos,
              "det Q stays positive before the ridge"),
        entry("t_star", tr.t_star, None, None, "ridge time along the characteristic"),
        entry("x_star", list(tr.x_star), None, None, "ridge point"),
        entry("kind", tr.kind, None, None, "focal point or collision"),
    ]
    focal = tr.kind == "focal"
    entries.append(entry("detQ_at_t_star", tr.detQ_star, 1e-5 if focal else None,
                         abs(tr.detQ_star) <= 1e-5 if focal else None, "det Q vanishes at a focal point"))
    return PASS if write_report(exp.output / f"trace_{z:.6f}.json", "trace", entries) else FAIL


def _nodal_gradients(sol):
    G = sol.grad_u
    n1, n2 = sol.grid.shape
    acc = np.zeros((n1, n2, 2))
    cnt = np.zeros((n1, n2))
    ok = np.isfinite(G).all(axis=-1)
    Gz = np.where(ok[..., None], G, 0.0)
    for di in (0, 1):
        for dj in (0, 1):
            acc[di:n1 - 1 + di, dj:n2 - 1 + dj] += Gz
            cnt[di:n1 - 1 + di, dj:n2 - 1 + dj] += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        return acc / cnt[..., None]


def dump_solution(path, sol, body):
    g = sol.grid
    m = sol.in_u
    P = g.points[m]
    du = _nodal_gradients(sol)[m]
    pol = np.full(len(P), np.nan)
    fin = np.isfinite(du).all(axis=1)
    pol[fin] = body.polar_gauge(du[fin])
    write_csv(path, ["x1", "x2", "u", "du1", "du2", "gauge_of_grad", "region"],
              [P[:, 0], P[:, 1], sol.u[m], du[:, 0], du[:, 1], pol, sol.region[m]])


def solution_checks(sol, exp, ridges=None):
    body, integrand = exp.body, exp.integrand
    tols = sol.diagnostics["tolerances"]
    m = sol.in_u
    rep = classify_and_verify(sol, body, integrand, *(ridges or (None, None)))
    up = float(np.nanmax((sol.u - sol.rho)[m]))
    lo = float(np.nanmax((-sol.rho_bar - sol.u)[m]))
    tc = tols["tau_contact"]
    out = [
        entry("upper_obstacle", up, tc, up <= tc, "membership between the obstacles"),
        entry("lower_obstacle", lo, tc, lo <= tc, "membership between the obstacles"),
        entry("gradient_constraint", rep["polar_max"] - 1, rep["tol_grad"],
              rep["polar_max"] - 1 <= rep["tol_grad"], "gradient in the polar set"),
        entry("elastic_residual", rep["elastic_residual"], rep["elastic_residual_tol"],
              rep["elastic_residual"] <= rep["elastic_residual_tol"], "Euler-Lagrange equation on E"),
        entry("upper_plastic_sign", rep["upper_sign_max"], rep["sign_tol"],
              rep["upper_sign_max"] <= rep["sign_tol"], "sign of the operator on P+"),
        entry("lower_plastic_sign", rep["lower_sign_min"], rep["sign_tol"],
              rep["lower_sign_min"] >= -rep["sign_tol"], "sign of the operator on P-"),
    ]
    pm = rep["plastic_polar_min"]
    out.append(entry("plastic_polar_min", pm, rep["tol_grad"],
                     None if not np.isfinite(pm) else pm >= 1 - rep["tol_grad"], "P is where the constraint is active"))
    de = rep["deep_elastic_polar_max"]
    out.append(entry("deep_elastic_polar_max", de, 1.0,
                     None if not np.isfinite(de) else de < 1.0, "constraint inactive inside E"))
    if ridges is not None:
        out.append(entry("ridge_plastic_hits", rep["ridge_plastic_hits"], 0,
                         rep["ridge_plastic_hits"] == 0, "ridge is elastic"))
    out.append(entry("hessian_sup", rep["hessian_sup"], None, None, "C^{1,1} regularity"))
    out.append(entry("plastic_empty", not bool(sol.plastic.any()), None, None, "plastic region"))
    if sol.free_boundary.any() and exp.domain.kind == "disk":
        r = sol.free_boundary_radius()
        out.append(entry("free_boundary_radius", [float(r.min()), float(r.max())], None, None, "free boundary"))
    return out


def _solve_both(exp):
    exp.need_domain()
    grid = exp.grid()
    setup = prepare_fields(exp.domain, exp.data, exp.body, grid)
    dbl = solve_double_obstacle(exp.integrand, exp.domain, exp.data, exp.body, grid,
                                schedule=exp.schedule(), tolerances=exp.tolerances, setup=setup)
    return grid, setup, dbl


def cmd_solve(exp):
    grid, setup, dbl = _solve_both(exp)
    rid = (ridge_mask(exp.domain, exp.data, exp.body, grid),
           ridge_mask(exp.domain, exp.data, exp.body, grid, reflected=True))
    entries = solution_checks(dbl, exp, rid)
    dump_solution(exp.output / "solution_double_obstacle.csv", dbl, exp.body)
    if exp.body.smooth:
        delta = float((exp.cfg.get("direct") or {}).get("delta", 1e-5))
        R, RB = setup.rho.values().reshape(grid.shape), setup.rho_bar.values().reshape(grid.shape)
        drc = solve_gradient_constrained(exp.integrand, exp.domain, exp.data, exp.body, grid,
                                         fields=(R, RB, setup.dist.reshape(grid.shape)),
                                         delta=delta, tolerances=exp.tolerances)
        dump_solution(exp.output / "solution_gradient_constrained.csv", drc, exp.body)
        m = dbl.in_u
        rng = float(np.nanmax(dbl.u[m]) - np.nanmin(dbl.u[m]))
        diff = float(np.nanmax(np.abs(dbl.u - drc.u)[m]))
        tol = 5e-3 * max(rng, 1e-300)
        entries.append(entry("cross_solver_difference", diff, tol, diff <= tol, "equivalence of the two problems"))
        entries.append(entry("direct_converged", drc.diagnostics["converged"], None,
                             drc.diagnostics["converged"], "gradient-constrained solve"))
        entries.append(entry("direct_gradient_margin", 1 - drc.diagnostics["max_cell_polar"], None, None,
                             "gradient in the polar set"))
    else:
        entries.append(entry("cross_solver_difference", "not applicable", None, None,
                             "the direct solver needs a smooth body"))
    info = {"u_center": dbl.value_at((0.0, 0.0)) if exp.domain.inside(np.zeros(2)) else None,
            "time_double_obstacle": dbl.diagnostics["time"], "h": grid.h}
    return PASS if write_report(exp.output / "solve.json", "solve", entries, info) else FAIL


def cmd_verify(exp):
    exp.need_domain()
    grid = exp.grid()
    setup = prepare_fields(exp.domain, exp.data, exp.body, grid)
    sol = solve_double_obstacle(exp.integrand, exp.domain, exp.data, exp.body, grid,
                                schedule=exp.schedule(), tolerances=exp.tolerances, setup=setup,
                                keep_levels=True)
    entries = solution_checks(sol, exp)
    if exp.body.smooth:
        b = penalization_bounds(sol, exp.body, exp.integrand)
        for lv in b["levels"]:
            e = lv["eps"]
            tag = f"eps={e:.6g}"
            entries.append(entry(f"psi_minus_rho[{tag}]", lv["psi_minus_rho"], lv["psi_bound"],
                                 lv["psi_minus_rho"] <= lv["psi_bound"], "mollified obstacle is C1 eps close"))
            chain = lv["lower_in_U_eps"] and lv["U_eps_in_far"]
            entries.append(entry(f"inclusion_chain[{tag}]", chain, None, chain, "U_eps inclusions"))
            lo, hi = lv["gap_bounds"]
            ok = lo < lv["gap_min"] and lv["gap_max"] < hi
            entries.append(entry(f"lower_obstacle_gap[{tag}]", [lv["gap_min"], lv["gap_max"]], [lo, hi], ok,
                                 "phi_eps + rho_bar between 2 C1 eps and 5 C1 eps"))
            entries.append(entry(f"operator_bound_ratio[{tag}]", lv["operator_ratio"], 1.0,
                                 lv["operator_ratio"] <= 1.0, "bound on div DF(Du_eps)"))
            entries.append(entry(f"psi_curvature[{tag}]", lv["psi_curvature"], b["C3"],
                                 lv["psi_curvature"] <= b["C3"], "one-sided Hessian bound on psi_eps"))
            entries.append(entry(f"phi_curvature[{tag}]", lv["phi_curvature"], -b["C3"],
                                 lv["phi_curvature"] >= -b["C3"], "one-sided Hessian bound on phi_eps"))
        info = {k: b[k] for k in ("C0", "C1", "C2", "C3", "C4")}
    else:
        info = {}
    return PASS if write_report(exp.output / "verify.json", "verify", entries, info) else FAIL


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="gradconstraint", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("body-check", "field", "ridge", "solve", "verify"):
        s = sub.add_parser(name)
        s.add_argument("config")
    s = sub.add_parser("trace")
    s.add_argument("config")
    s.add_argument("--y", type=float, required=True, help="boundary parameter z in [0, 1)")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return INPUT_ERROR if exc.code else PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = load_config(args.config)
        if args.command == "body-check":
            return cmd_body_check(exp)
        if args.command == "field":
            return cmd_field(exp)
        if args.command == "ridge":
            return cmd_ridge(exp)
        if args.command == "trace":
            if not 0.0 <= args.y < 1.0:
                raise ConfigError("--y must lie in [0, 1)")
            return cmd_trace(exp, args.y)
        if args.command == "solve":
            return cmd_solve(exp)
        return cmd_verify(exp)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except (SolverError, RuntimeError, ValueError) as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return FAIL


if __name__ == "__main__":
    sys.exit(main())
