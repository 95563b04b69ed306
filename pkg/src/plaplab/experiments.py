"""Batch runs behind the command line: one function per subcommand.

Every runner takes a validated ExperimentConfig and returns a dict with
``rows`` (one per table line), ``summary`` and ``passed``; solve also returns
the solution under ``fields``.  Nothing here depends on wall-clock time, so a
fixed config and seed reproduce the same numbers.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .catalog import manufactured, random_fields, sample_centers, smooth_field, v_field
from .config import resolve
from .estimates import (
    ExcessDatum,
    bernstein_v,
    caccioppoli_check,
    check_gradient_bound,
    check_lorentz_lipschitz,
    degiorgi_iterate,
    hodge_rigidity_check,
    oscillation_check,
    rescale_datum,
    tilde_V,
)
from .fields import Ball, Grid, ScalarField, _scalar_values, read_field
from .lorentz import (
    LorentzParams,
    layer_cake_quasinorm,
    lorentz_norm,
    quasinorm,
    rearrange,
    relative_gap,
    square_identity_check,
)
from .models import OperatorModel, regularize
from .potentials import (
    dyadic_constant,
    lorentz_bound_check,
    p_potential,
    p_potential_dyadic,
    potential_field,
    wolff_potential,
)
from .solver import BSpec, DirichletProblem, SolverOptions, fixed_point_solve, solve_dirichlet

ORDER_FLOOR = 1.0
EXACT_TOL = 1e-10
HODGE_ZERO_TOL = 1e-8


# ---------------------------------------------------------------------------
# building blocks from config


def make_grid(gc, points=None, dim=None):
    return Grid.cube(dim or gc.dim, gc.lower, gc.upper, points or gc.points)


def make_model(mc, p=None):
    base = OperatorModel(mc.variant, mc.p if p is None else p, mc.s, mc.nu, mc.L, mc.profile)
    return regularize(base, mc.eps, mc.method)


def make_options(sc):
    return SolverOptions(**sc.model_dump())


def make_V(grid, vc, seed, base="."):
    if vc is None:
        return v_field(grid, "constant")
    if vc.kind == "zero":
        return ScalarField(grid, np.zeros(grid.shape))
    if vc.kind == "file":
        f = read_field(resolve(base, vc.file))
        if f.grid.shape != grid.shape:
            raise ValueError(f"V file grid {f.grid.shape} does not match the configured grid {grid.shape}")
        return f
    return v_field(grid, vc.kind, vc.amplitude, vc.center, vc.radius, vc.alpha,
                   seed if vc.seed is None else vc.seed, vc.modes, vc.sigma)


def make_boundary(grid, bc, base="."):
    X = grid.coords()
    if bc.kind == "zero":
        return ScalarField(grid, np.zeros(grid.shape))
    if bc.kind == "linear":
        z = np.ones(grid.dim) / math.sqrt(grid.dim) if bc.slope is None else np.asarray(bc.slope, float)
        return ScalarField(grid, np.tensordot(z, X, axes=1))
    if bc.kind == "quadratic":
        return ScalarField(grid, 0.5 * np.sum(X**2, axis=0))
    f = read_field(resolve(base, bc.file))
    if f.grid.shape != grid.shape:
        raise ValueError(f"boundary file grid {f.grid.shape} does not match the configured grid {grid.shape}")
    return f


def _map(fn, items, threads):
    """Ordered map; runs concurrently when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _solve_row(report):
    return {
        "converged": report.converged,
        "diverged": report.diverged,
        "iterations": report.iterations,
        "residual": report.residual,
        "max_energy_increase": report.max_energy_increase,
    }


def _energy_ok(report):
    return report.max_energy_increase <= 0.0


def _origin_ball(grid, radius):
    return Ball(tuple(0.5 * (grid.lower() + grid.upper())), radius)


# ---------------------------------------------------------------------------
# solve


def run_solve(cfg, base=".", threads=1):
    pc = cfg.problem
    opts = make_options(cfg.solver)
    grid = make_grid(cfg.grid)
    exact = None
    if pc.manufactured:
        slope = pc.boundary.slope if pc.manufactured == "linear" else None
        problem, exact = manufactured(cfg.model.p, grid.dim, grid.shape[0], cfg.model.eps, pc.manufactured,
                                      cfg.model.s, slope, opts, cfg.grid.lower, cfg.grid.upper)
    else:
        model = make_model(cfg.model)
        V = make_V(grid, pc.V, cfg.seed, base)
        b = BSpec(pc.b.law, pc.b.q, pc.b.Gamma) if pc.b is not None else None
        boundary = make_boundary(grid, pc.boundary, base)
        f = V.components() if pc.mode == "dirichlet" else None
        problem = DirichletProblem(model, boundary, V=V, b_spec=b, f=f, options=opts)
    if pc.mode == "fixed-point":
        u, report = fixed_point_solve(problem)
    else:
        u, report = solve_dirichlet(problem)
    summary = report.as_dict()
    if exact is not None:
        summary["max_error"] = float(np.max(np.abs(u.values - exact.values)[u.mask]))
    ok = report.converged and not report.diverged and _energy_ok(report)
    row = {"mode": pc.mode, "p": problem.model.p, "points": grid.shape[0], **_solve_row(report)}
    if report.contraction_factor is not None or pc.mode == "fixed-point":
        row["outer_iterations"] = report.outer_iterations
        row["contraction_factor"] = report.contraction_factor
        row["label"] = report.label
    if exact is not None:
        row["max_error"] = summary["max_error"]
    row["passed"] = ok
    return {"rows": [row], "summary": summary, "passed": ok, "fields": {"u": u}}


# ---------------------------------------------------------------------------
# potentials


def _centers(cfg, grid, base):
    pc = cfg.potential
    if pc.region == "full":
        return [grid.node(tuple(i)) for i in np.argwhere(grid.full_mask())]
    pts = []
    if pc.centers:
        pts += [np.asarray(c, float) for c in pc.centers]
    if pc.centers_file:
        arr = np.atleast_2d(np.loadtxt(resolve(base, pc.centers_file), delimiter=",", ndmin=2))
        pts += list(arr)
    if not pts:
        pts = [0.5 * (grid.lower() + grid.upper())]
    for x in pts:
        if x.shape != (grid.dim,):
            raise ValueError(f"center {x.tolist()} does not have {grid.dim} coordinates")
    return pts


def run_potential(cfg, base=".", threads=1):
    pc = cfg.potential
    grid = make_grid(cfg.grid)
    V = make_V(grid, cfg.problem.V, cfg.seed, base)
    centers = _centers(cfg, grid, base)
    R = pc.R
    c_n = dyadic_constant(grid.dim)
    if pc.region == "full" and pc.rule == "center":
        P_R = potential_field(V, R, None, threads)
        P_2R = potential_field(V, 2 * R, None, threads)
        idx = [tuple(grid.nearest_index(x)) for x in centers]
        pr = [float(P_R[i]) for i in idx]
        p2 = [float(P_2R[i]) for i in idx]
    else:
        pr = _map(lambda x: p_potential(V, x, R, pc.rule).value, centers, threads)
        p2 = _map(lambda x: p_potential(V, x, 2 * R, pc.rule).value, centers, threads)
    dy = _map(lambda x: p_potential_dyadic(V, x, R, pc.rule), centers, threads)
    wo = _map(lambda x: wolff_potential(V, x, R, pc.beta, pc.p, pc.rule).value, centers, threads)
    rows = []
    names = "xyz"[: grid.dim]
    for x, a, d, w, b in zip(centers, pr, dy, wo, p2):
        ok = all(math.isfinite(v) for v in (a, d, w, b)) and c_n * d <= b * (1 + 1e-12)
        row = {k: float(v) for k, v in zip(names, x)}
        row.update({"R": R, "P": a, "dyadic": d, "wolff": w, "P_2R": b, "passed": ok})
        rows.append(row)
    passed = all(r["passed"] for r in rows)
    summary = {"count": len(rows), "dyadic_constant": c_n, "max_P": max(pr), "rule": pc.rule}
    return {"rows": rows, "summary": summary, "passed": passed}


# ---------------------------------------------------------------------------
# Lorentz norms


def equimeasurable(f, profile):
    """``|{mu* > t}| == |{|f| > t}|`` at every value level (counts times cell)."""
    vals = np.abs(_scalar_values(f)[f.mask])
    for t in np.concatenate([[0.0], profile.levels]):
        if profile.distribution(t) != np.count_nonzero(vals > t) * f.grid.cell_volume:
            return False
    return True


def run_lorentz(cfg, base=".", threads=1):
    lc = cfg.lorentz
    grid = Grid.cube(lc.dim, cfg.grid.lower, cfg.grid.upper, lc.points)
    fields = random_fields(grid, lc.count, cfg.seed)

    def one(item):
        i, f = item
        prof = rearrange(f)
        eq = equimeasurable(f, prof)
        sq = square_identity_check(f, lc.dim).discrepancy if (lc.square_identity and lc.dim > 2) else None
        out = []
        for gamma, q in lc.params:
            par = LorentzParams(gamma, q)
            qn = quasinorm(prof, par)
            hn = lorentz_norm(prof, par)
            lc_gap = relative_gap(qn, layer_cake_quasinorm(f, par))
            ratio = qn / hn if hn > 0 else 0.0
            ok = eq and ratio <= 1 + 1e-12 and lc_gap <= lc.tolerance and (sq is None or sq <= lc.tolerance)
            out.append({"field": i, "gamma": gamma, "q": q, "quasinorm": qn, "hunt_norm": hn, "ratio": ratio,
                        "layer_cake_gap": lc_gap, "square_identity_gap": sq, "equimeasurable": eq,
                        "passed": bool(ok)})
        return out

    rows = [r for chunk in _map(one, list(enumerate(fields)), threads) for r in chunk]
    ratios = {}
    for r in rows:
        key = f"{r['gamma']:g},{r['q']:g}"
        ratios[key] = max(ratios.get(key, 0.0), r["ratio"])
    sq = [r["square_identity_gap"] for r in rows if r["square_identity_gap"] is not None]
    summary = {"fields": lc.count, "max_ratio": ratios, "max_square_identity_gap": max(sq) if sq else None,
               "max_layer_cake_gap": max(r["layer_cake_gap"] for r in rows)}
    return {"rows": rows, "summary": summary, "passed": all(r["passed"] for r in rows)}


# ---------------------------------------------------------------------------
# estimate verification


def _report_row(rep, **extra):
    row = dict(extra)
    row.update({"name": rep.name, "lhs": rep.lhs, "constant": rep.empirical_constant, "cap": rep.cap,
                "passed": rep.passed})
    for k, v in rep.rhs_terms.items():
        row[f"rhs_{k}"] = v
    return row


def _solved_family(cfg, points_list, opts, threads, kind="quadratic"):
    vc = cfg.verify
    cells = list(itertools.product(vc.p_values, points_list))

    def one(cell):
        p, m = cell
        problem, exact = manufactured(p, cfg.grid.dim, m, cfg.model.eps, kind, cfg.model.s, None, opts,
                                      cfg.grid.lower, cfg.grid.upper)
        u, rep = solve_dirichlet(problem)
        return p, m, problem, u, rep

    return _map(one, cells, threads)


def _solve_failed(rep):
    return not rep.converged or not _energy_ok(rep)


def _verify_gradient(cfg, caps, opts, threads, variant):
    vc = cfg.verify
    rows = []
    for p, m, problem, u, rep in _solved_family(cfg, vc.refinements, opts, threads):
        ball = _origin_ball(u.grid, vc.ball_radius)
        r = check_gradient_bound(u, problem.model, problem.V, ball, variant, t=vc.t, cap=caps.get(variant),
                                 threads=threads)
        row = _report_row(r, p=p, points=m, solver_converged=rep.converged)
        row["passed"] = row["passed"] and not _solve_failed(rep)
        rows.append(row)
    return rows


def _verify_linear(cfg, caps, opts, threads):
    vc = cfg.verify
    rows = []
    for p, m, problem, u, rep in _solved_family(cfg, vc.refinements, opts, threads, "linear"):
        ball = _origin_ball(u.grid, vc.ball_radius)
        r = check_gradient_bound(u, problem.model, None, ball, "apl", t=vc.t, cap=caps.get("linear", 1.1))
        row = _report_row(r, p=p, points=m, solver_converged=rep.converged)
        row["passed"] = row["passed"] and not _solve_failed(rep)
        rows.append(row)
    return rows


def _verify_subcritical(cfg, caps, opts, threads, variant):
    vc = cfg.verify
    grid = make_grid(cfg.grid)
    cells = list(itertools.product(vc.p_values, vc.q_fractions, vc.V_kinds))

    def one(cell):
        p, frac, kind = cell
        V = v_field(grid, kind, seed=cfg.seed)
        b = BSpec("power", frac * (p - 1), 1.0)
        problem = DirichletProblem(make_model(cfg.model, p), ScalarField(grid, np.zeros(grid.shape)), V=V,
                                   b_spec=b, options=opts)
        u, rep = fixed_point_solve(problem)
        r = check_gradient_bound(u, problem.model, V, _origin_ball(grid, vc.ball_radius), variant, b_spec=b,
                                 t=vc.t, cap=caps.get(variant))
        row = _report_row(r, p=p, q=b.q, V=kind, outer_iterations=rep.outer_iterations,
                          solver_converged=rep.converged)
        row["passed"] = row["passed"] and rep.converged and not rep.diverged and _energy_ok(rep)
        return row

    return _map(one, cells, threads)


def oscillation_height(datum):
    """Largest ``d`` meeting the measure precondition: ``d^2 = int_{B/2} (v-k)_+^2 / |B/2 ∩ {v>k}|``."""
    v, ball = datum.v, datum.ball
    grid = v.grid
    sel = v.mask & grid.ball_mask(ball.scaled(0.5))
    vals = _scalar_values(v)[sel]
    above = vals > datum.k
    if not np.any(above):
        return None
    inner = float(np.sum((vals[above] - datum.k) ** 2))
    return math.sqrt(inner / np.count_nonzero(above)) * (1 - 1e-12)


def _verify_excess(cfg, caps, opts, threads, which):
    vc = cfg.verify
    rows = []
    for p, m, problem, u, rep in _solved_family(cfg, vc.refinements, opts, threads):
        ball = _origin_ball(u.grid, vc.ball_radius)
        v = bernstein_v(u, problem.model)
        tV = tilde_V(problem.V, u, problem.model, ball)
        vmax = float(np.max(_scalar_values(v)[v.mask & u.grid.ball_mask(ball.scaled(0.5))]))
        for k in np.linspace(0.0, 0.9 * vmax, vc.levels):
            datum = ExcessDatum(v, tV, ball, float(k))
            if which == "caccioppoli":
                r = caccioppoli_check(datum, caps.get("caccioppoli"))
                row = _report_row(r, p=p, points=m, k=float(k))
            else:
                d = oscillation_height(datum)
                if d is None:
                    continue
                r = oscillation_check(datum, d, cap=caps.get("oscillation"))
                rs = oscillation_check(rescale_datum(datum, d), 1.0)
                gap = relative_gap(r.empirical_constant, rs.empirical_constant)
                row = _report_row(r, p=p, points=m, k=float(k), d=d, rescale_gap=gap)
                row["passed"] = row["passed"] and gap <= 1e-8
            row["passed"] = row["passed"] and not _solve_failed(rep)
            rows.append(row)
    return rows


def _verify_degiorgi(cfg, caps, opts, threads):
    vc = cfg.verify
    c = caps.get("degiorgi")
    rows = []
    for p, m, problem, u, rep in _solved_family(cfg, [cfg.grid.points], opts, threads):
        ball = _origin_ball(u.grid, vc.ball_radius)
        v = bernstein_v(u, problem.model)
        tV = tilde_V(problem.V, u, problem.model, ball)
        centers = sample_centers(u.grid, _origin_ball(u.grid, vc.inner_radius), vc.centers, cfg.seed)
        res = _map(lambda x: degiorgi_iterate(v, tV, x, vc.degiorgi_radius, c=c), centers, threads)
        for i, (x, r) in enumerate(zip(centers, res)):
            mono = all(b >= a for a, b in zip(r.levels, r.levels[1:]))
            rows.append({"p": p, "points": m, "center": i, **{a: float(b) for a, b in zip("xyz", x)},
                         "value": r.value, "average_term": r.average_term, "potential_term": r.potential_term,
                         "ratio": r.ratio, "levels": len(r.levels), "monotone": mono, "cap": c,
                         "passed": r.passed and mono and not _solve_failed(rep)})
    return rows


def _power_V_problem(cfg, p, m, opts):
    grid = make_grid(cfg.grid, m, 3)
    V = v_field(grid, "power", alpha=0.5)
    problem = DirichletProblem(make_model(cfg.model, p), ScalarField(grid, np.zeros(grid.shape)), V=V,
                               f=V.components(), options=opts)
    return grid, V, problem


def _verify_lorentz_lipschitz(cfg, caps, opts, threads):
    vc = cfg.verify
    cells = list(itertools.product(vc.p_values, vc.refinements))

    def one(cell):
        p, m = cell
        grid, V, problem = _power_V_problem(cfg, p, m, opts)
        u, rep = solve_dirichlet(problem)
        r = check_lorentz_lipschitz(u, problem.model, V, _origin_ball(grid, vc.inner_radius),
                                    _origin_ball(grid, vc.ball_radius), caps.get("lorentz-lipschitz"))
        row = _report_row(r, p=p, points=m, solver_converged=rep.converged)
        row["passed"] = row["passed"] and not _solve_failed(rep)
        return row

    return _map(one, cells, threads)


def _verify_lorentz_bound(cfg, caps, opts, threads):
    vc = cfg.verify
    rows = []
    for m in vc.refinements:
        grid = make_grid(cfg.grid, m, 3)
        V = v_field(grid, "power", alpha=0.5)
        r = lorentz_bound_check(V, cfg.potential.R, region=_origin_ball(grid, vc.inner_radius),
                                cap=caps.get("lorentz-bound"), threads=threads)
        rows.append({"points": m, **r.as_dict()})
    return rows


def run_verify(cfg, caps, base=".", threads=1):
    vc = cfg.verify
    opts = make_options(cfg.solver)
    name = vc.estimate
    if name in ("apl", "general-growth"):
        rows = _verify_gradient(cfg, caps, opts, threads, name)
    elif name == "linear":
        rows = _verify_linear(cfg, caps, opts, threads)
    elif name in ("aes1", "aes2"):
        rows = _verify_subcritical(cfg, caps, opts, threads, name)
    elif name in ("caccioppoli", "oscillation"):
        rows = _verify_excess(cfg, caps, opts, threads, name)
    elif name == "degiorgi":
        rows = _verify_degiorgi(cfg, caps, opts, threads)
    elif name == "lorentz-lipschitz":
        rows = _verify_lorentz_lipschitz(cfg, caps, opts, threads)
    else:
        rows = _verify_lorentz_bound(cfg, caps, opts, threads)
    key = "ratio" if name in ("degiorgi",) else ("ratio_hunt" if name == "lorentz-bound" else "constant")
    vals = [r[key] for r in rows]
    summary = {"estimate": name, "rows": len(rows), "max_constant": max(vals) if vals else None,
               "cap": caps.get("linear", 1.1) if name == "linear" else caps.get(name)}
    if name == "lorentz-bound":
        summary["max_ratio_lorentz"] = max(r["ratio_lorentz"] for r in rows)
    return {"rows": rows, "summary": summary, "passed": bool(rows) and all(r["passed"] for r in rows)}


# ---------------------------------------------------------------------------
# Hodge rigidity


def run_hodge(cfg, caps, base=".", threads=1):
    hc = cfg.hodge
    grid = make_grid(cfg.grid, hc.points)
    cap = caps.get("hodge")
    ws = [smooth_field(grid, [cfg.seed, i]) for i in range(hc.count)]
    cells = list(itertools.product(range(hc.count), hc.deltas))

    def one(cell):
        i, delta = cell
        r = hodge_rigidity_check(ws[i], delta, hc.t, cap=cap)
        ok = r.passed and (delta != 0 or r.ratio <= HODGE_ZERO_TOL)
        return {"field": i, **r.as_dict(), "passed": bool(ok)}

    rows = _map(one, cells, threads)
    per_delta = {}
    for r in rows:
        if r["delta"] != 0:
            key = f"{r['delta']:g}"
            per_delta[key] = max(per_delta.get(key, 0.0), r["ratio"])
    zero = [r["ratio"] for r in rows if r["delta"] == 0]
    summary = {"max_ratio": per_delta, "max_ratio_delta0": max(zero) if zero else None, "cap": cap}
    return {"rows": rows, "summary": summary, "passed": all(r["passed"] for r in rows)}


# ---------------------------------------------------------------------------
# convergence sweep


def observed_orders(rows):
    """Attach ``order = log(e_coarse/e_fine)/log(h_coarse/h_fine)`` within each (p, eps, amplitude) group.

    Pairs whose finer error is at the round-off floor (``EXACT_TOL``) get ``None``.
    """
    groups = {}
    for r in rows:
        groups.setdefault((r["p"], r["eps"], r["amplitude"]), []).append(r)
    for grp in groups.values():
        grp.sort(key=lambda r: r["h"], reverse=True)
        grp[0]["order"] = None
        for a, b in zip(grp, grp[1:]):
            if a["max_error"] > EXACT_TOL and b["max_error"] > EXACT_TOL:
                b["order"] = math.log(a["max_error"] / b["max_error"]) / math.log(a["h"] / b["h"])
            else:
                b["order"] = None
    return rows


def run_sweep(cfg, base=".", threads=1):
    sc = cfg.sweep
    opts = make_options(cfg.solver)
    cells = list(itertools.product(sc.p, sc.points, sc.eps, sc.amplitude))

    def one(item):
        idx, (p, m, eps, amp) = item
        problem, exact = manufactured(p, cfg.grid.dim, m, eps, sc.manufactured, cfg.model.s, None, opts,
                                      cfg.grid.lower, cfg.grid.upper, amp)
        u, rep = solve_dirichlet(problem)
        err = float(np.max(np.abs(u.values - exact.values)[u.mask]))
        return {"cell": idx, "p": p, "points": m, "h": u.grid.h, "eps": eps, "amplitude": amp, "max_error": err,
                **_solve_row(rep)}

    rows = _map(one, list(enumerate(cells)), threads)
    observed_orders(rows)
    for r in rows:
        conv = r["max_error"] <= EXACT_TOL or r["order"] is None or r["order"] >= ORDER_FLOOR
        r["passed"] = bool(r["converged"] and r["max_energy_increase"] <= 0.0 and conv)
    rows.sort(key=lambda r: r["cell"])
    summary = {"cells": len(rows), "max_energy_increase": max(r["max_energy_increase"] for r in rows),
               "min_order": min((r["order"] for r in rows if r["order"] is not None), default=None)}
    return {"rows": rows, "summary": summary, "passed": all(r["passed"] for r in rows)}


def output_dir(cfg, out):
    return Path(out or cfg.output or ".")
