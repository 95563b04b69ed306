"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from plaplab import experiments as E
from plaplab.catalog import manufactured, random_fields
from plaplab.cli import run
from plaplab.config import parse_config
from plaplab.estimates import load_caps
from plaplab.fields import Grid, ScalarField
from plaplab.lorentz import square_identity_check
from plaplab.potentials import dyadic_constant, omega, p_potential, p_potential_dyadic, wolff_potential
from plaplab.solver import solve_dirichlet

CAPS = load_caps()


def cfg(**blocks):
    return parse_config(blocks)


# ---------------------------------------------------------------------------
# criteria: each returns (passed, detail)


def criterion_1():
    r = E.run_lorentz(cfg(lorentz={"count": 100, "points": 9, "square_identity": False}))
    eq = all(row["equimeasurable"] for row in r["rows"])
    gap = r["summary"]["max_layer_cake_gap"]
    return eq and gap <= 1e-8, f"100 fields, equimeasurable={eq}, max layer-cake gap={gap:.2e}"


def criterion_2():
    r = E.run_lorentz(cfg(lorentz={"count": 100, "points": 9, "params": [[3.0, 1.0]]}))
    fam = r["summary"]["max_square_identity_gap"]
    g = Grid.cube(3, 0.0, 1.0, 9)
    worst = 0.0
    for lo, hi, c in (((0, 0, 0), (3, 3, 3), 1.0), ((1, 2, 0), (4, 6, 3), 1.7), ((2, 2, 2), (9, 9, 5), 0.3)):
        A = np.zeros(g.shape, bool)
        A[tuple(slice(a, b) for a, b in zip(lo, hi))] = True
        rep = square_identity_check(ScalarField(g, c * A), 3)
        closed = c**2 * (A.sum() * g.cell_volume) ** (2 / 3)
        worst = max(worst, abs(rep.lhs - closed) / closed, abs(rep.rhs - closed) / closed)
    return fam <= 1e-8 and worst <= 1e-12, f"family gap={fam:.2e}, indicator closed-form gap={worst:.2e}"


def criterion_3():
    params = [[2.0, 1.0], [2.0, 2.0], [3.0, 1.0], [3.0, 2.0]]
    runs = [E.run_lorentz(cfg(lorentz={"count": 20, "points": m, "params": params, "square_identity": False}))
            for m in (9, 17, 33)]
    dominated = all(all(row["ratio"] <= 1 + 1e-12 for row in r["rows"]) for r in runs)
    maxima = [r["summary"]["max_ratio"] for r in runs]
    spread = max(max(m[k] for m in maxima) / min(m[k] for m in maxima) - 1 for k in maxima[0])
    finite = all(math.isfinite(v) for m in maxima for v in m.values())
    return dominated and finite and spread <= 0.10, f"ratio <= 1 everywhere={dominated}, max spread={spread:.3f}"


def criterion_4():
    c, R = 1.3, 0.6
    worst = 0.0
    for n, pts in ((2, 41), (3, 17)):
        g = Grid.cube(n, -1.0, 1.0, pts)
        V = ScalarField(g, np.full(g.shape, c))
        x = np.zeros(n)
        P = p_potential(V, x, R, rule="overlap").value
        worst = max(worst, abs(P / (c * math.sqrt(omega(n)) * R) - 1))
        beta, p = 0.5, 2.5
        W = wolff_potential(V, x, R, beta, p, rule="overlap").value
        closed = (c * omega(n)) ** (1 / (p - 1)) * (p - 1) / (beta * p) * R ** (beta * p / (p - 1))
        worst = max(worst, abs(W / closed - 1))
    violations = 0
    for n, pts in ((2, 33), (3, 13)):
        c_n = math.log(2) / 2 ** ((n - 2) / 2)
        assert c_n == pytest.approx(dyadic_constant(n))
        g = Grid.cube(n, -1.0, 1.0, pts)
        for f in random_fields(g, 50, seed=n):
            x = np.zeros(n)
            if c_n * p_potential_dyadic(f, x, 0.4) > p_potential(f, x, 0.8).value * (1 + 1e-12):
                violations += 1
    ok = worst <= 1e-4 and violations == 0
    return ok, f"closed-form rel error={worst:.2e}, dyadic violations={violations}/100"


def _sweep():
    if not hasattr(_sweep, "cache"):
        _sweep.cache = E.run_sweep(cfg(sweep={"p": [1.5, 2.0, 3.0, 4.0], "points": [9, 17, 33, 65]}))
    return _sweep.cache


def criterion_5():
    rows = _sweep()["rows"]
    mono = True
    for p in (1.5, 2.0, 3.0, 4.0):
        errs = [r["max_error"] for r in sorted((r for r in rows if r["p"] == p), key=lambda r: r["points"])]
        # errors at the round-off floor mean the family member is reproduced exactly
        mono = mono and all(b < a or max(a, b) <= E.EXACT_TOL for a, b in zip(errs, errs[1:]))
    order = _sweep()["summary"]["min_order"]
    problem, exact = manufactured(2.0, 2, 33, kind="linear")
    u, rep = solve_dirichlet(problem)
    lin = float(np.max(np.abs(u.values - exact.values)))
    ok = mono and order >= 1.0 and rep.converged and lin <= 1e-10
    return ok, f"monotone={mono}, min observed order={order:.3f}, p=2 linear error={lin:.1e}"


def criterion_6():
    rows = _sweep()["rows"]
    worst = max(r["max_energy_increase"] for r in rows)
    steps = sum(r["iterations"] for r in rows)
    return worst <= 0.0 and all(r["converged"] for r in rows), f"{steps} accepted steps, max increment={worst:.3e}"


def _verify(estimate, **extra):
    return E.run_verify(cfg(verify={"estimate": estimate, **extra}), CAPS)


def criterion_7():
    a = _verify("apl", p_values=[1.5, 2.0, 3.0, 4.0], refinements=[17, 33, 65])
    lin = _verify("linear", p_values=[1.5, 2.0, 3.0, 4.0], refinements=[17, 33, 65])
    ok = a["passed"] and lin["passed"] and lin["summary"]["max_constant"] <= 1.1
    return ok, (f"apl max={a['summary']['max_constant']:.4f} (cap {CAPS['apl']}), "
                f"linear max={lin['summary']['max_constant']:.4f} (cap 1.1)")


def criterion_8():
    r = E.run_verify(cfg(grid={"points": 65}, verify={"estimate": "degiorgi", "p_values": [2.0], "centers": 100}),
                     CAPS)
    rows = r["rows"]
    mono = all(row["monotone"] for row in rows)
    ok = r["passed"] and len(rows) == 100 and mono
    return ok, f"{len(rows)} centers, max ratio={r['summary']['max_constant']:.4f} (c={CAPS['degiorgi']}), monotone={mono}"


def criterion_9():
    kw = dict(p_values=[1.5, 2.0, 3.0, 4.0], refinements=[17, 33, 65], levels=10)
    ca = _verify("caccioppoli", **kw)
    osc = _verify("oscillation", **kw)
    gap = max(row["rescale_gap"] for row in osc["rows"])
    ok = ca["passed"] and osc["passed"] and gap <= 1e-8 and len(ca["rows"]) == 120
    return ok, (f"caccioppoli max={ca['summary']['max_constant']:.4f}, oscillation max="
                f"{osc['summary']['max_constant']:.4f} over {len(osc['rows'])} rows, rescale gap={gap:.1e}")


def _critical(amplitude):
    return E.run_solve(cfg(
        grid={"dim": 2, "points": 33},
        model={"p": 2.0},
        problem={"mode": "fixed-point", "V": {"kind": "indicator", "amplitude": amplitude, "radius": 0.5},
                 "b": {"law": "power", "q": 1.0, "Gamma": 1.0}},
        solver={"critical_c0": 1.0, "critical_eps0": 10.0},
    ))


def criterion_10():
    small, large = _critical(0.5), _critical(50.0)
    s, l = small["summary"], large["summary"]
    small_ok = (small["passed"] and s["label"] == "critical-small" and s["contraction_factor"] is not None
                and s["contraction_factor"] < 1)
    logged = (not large["passed"]) and (l["diverged"] or "max" in l["message"]) and bool(l["message"])
    return small_ok and logged, (f"amplitude 0.5: {s['label']}, contraction={s['contraction_factor']:.3f}; "
                                 f"amplitude 50: {l['message']}")


def criterion_11():
    r = _verify("aes2", p_values=[2.0, 3.0], q_fractions=[0.25, 0.5])
    return r["passed"], f"{len(r['rows'])} runs, max={r['summary']['max_constant']:.4f} (cap {CAPS['aes2']})"


def criterion_12():
    r = E.run_hodge(cfg(hodge={"count": 20, "deltas": [0.0, 0.05, 0.1, 0.2], "t": 2.5, "points": 65}), CAPS)
    s = r["summary"]
    worst = max(s["max_ratio"].values())
    ok = r["passed"] and s["max_ratio_delta0"] <= 1e-8
    return ok, f"max ratio={worst:.4f} (cap {CAPS['hodge']}), delta=0 ratio={s['max_ratio_delta0']:.1e}"


def criterion_13():
    blocks = {
        "grid": {"points": 17},
        "problem": {"V": {"kind": "random-lognormal"}},
        "lorentz": {"count": 5},
        "verify": {"estimate": "apl", "p_values": [2.0, 3.0], "refinements": [9, 17]},
        "hodge": {"count": 3, "points": 17},
        "sweep": {"p": [2.0, 3.0], "points": [9, 17]},
    }
    same = True
    with tempfile.TemporaryDirectory() as tmp:
        for command in ("solve", "potential", "lorentz", "verify", "hodge", "sweep"):
            outs = []
            for i, threads in enumerate((1, 1, 3)):
                d = Path(tmp) / f"{command}{i}"
                run(command, parse_config(blocks), d, threads=threads)
                outs.append(sorted((f.name, f.read_bytes()) for f in d.iterdir()))
            same = same and outs[0] == outs[1] == outs[2]
    return same, "six commands, two repeats and a threaded run byte-identical" if same else "reports differ"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 14)}


# ---------------------------------------------------------------------------
# pytest entry points


def report(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n]()
    with capsys.disabled():
        sys.stdout.write("\n")
        report(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = []
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        report(n, ok, detail)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
