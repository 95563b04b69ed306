import json
import math

import numpy as np
import pytest

from plaplab.catalog import random_fields, smooth_field
from plaplab.fields import Ball, Grid, ScalarField
from plaplab.models import OperatorModel, regularize
from plaplab.estimates import (
    ExcessDatum,
    bernstein_v,
    caccioppoli_check,
    check_gradient_bound,
    check_lorentz_lipschitz,
    degiorgi_iterate,
    hodge_rigidity_check,
    load_caps,
    oscillation_check,
    rescale_datum,
    sobolev_chi,
    tilde_V,
)


def linear_u(points=17, slope=(0.6, -0.8)):
    g = Grid.cube(2, -1, 1, points)
    X = g.coords()
    return ScalarField(g, slope[0] * X[0] + slope[1] * X[1])


def test_bundled_caps_and_override(tmp_path):
    caps = load_caps()
    for key in ("apl", "aes1", "aes2", "caccioppoli", "oscillation", "degiorgi", "hodge", "linear"):
        assert caps[key] > 0
    assert caps["linear"] == 1.1
    path = tmp_path / "caps.json"
    path.write_text(json.dumps({"_note": "x", "apl": 2.0, "hodge": {"cap": 3.0}}))
    assert load_caps(path) == {"apl": 2.0, "hodge": 3.0}


def test_bernstein_and_tilde_V_on_linear_u():
    u = linear_u()
    eps = 0.1
    model = regularize(OperatorModel(p=3), eps)
    v = bernstein_v(u, model)
    assert np.allclose(v.values[2:-2, 2:-2], (eps**2 + 1.0) ** 1.5, rtol=1e-12)
    V = ScalarField(u.grid, np.full(u.grid.shape, 2.0))
    tv = tilde_V(V, u, model, Ball((0.0, 0.0), 0.5))
    assert np.allclose(tv.values, 2.0 * math.sqrt(eps**2 + 1.0), rtol=1e-12)
    with pytest.raises(ValueError):
        tilde_V(V, u, model, Ball((0.0, 0.0), 0.5), variant="b")


def test_gradient_bound_linear_closed_form():
    # |Du| = 1 everywhere: constant = 1 / (s + 1) for the averaged term alone
    u = linear_u()
    eps = 1e-3
    model = regularize(OperatorModel(p=2), eps)
    rep = check_gradient_bound(u, model, None, Ball((0.0, 0.0), 0.8), "apl")
    assert rep.lhs == pytest.approx(1.0, rel=1e-12)
    assert rep.rhs_terms["potential"] == 0.0
    assert rep.empirical_constant == pytest.approx(1 / (1 + eps), rel=1e-12)
    assert rep.passed
    capped = check_gradient_bound(u, model, None, Ball((0.0, 0.0), 0.8), "apl", cap=0.5)
    assert not capped.passed
    with pytest.raises(ValueError):
        check_gradient_bound(u, model, None, Ball((0.0, 0.0), 0.8), "nonsense")


def test_caccioppoli_constant_and_linear_v():
    g = Grid.cube(2, -1, 1, 33)
    ball = Ball((0.0, 0.0), 0.6)
    zero = ScalarField(g, np.zeros(g.shape))
    const = ScalarField(g, np.full(g.shape, 2.0))
    rep = caccioppoli_check(ExcessDatum(const, zero, ball, 0.5))
    assert rep.lhs == 0.0 and rep.empirical_constant == 0.0
    # v = 2 + x: |Dv| = 1, (v - k)_+ = 2 + x for k = 0
    X = g.coords()
    lin = ScalarField(g, 2.0 + X[0])
    rep = caccioppoli_check(ExcessDatum(lin, zero, ball, 0.0))
    r = np.sqrt(np.sum(X**2, axis=0))
    half = np.count_nonzero(r <= 0.3 + 1e-12) * g.cell_volume
    full = np.sum((2.0 + X[0])[r <= 0.6 + 1e-12] ** 2) * g.cell_volume
    assert rep.lhs == pytest.approx(half, rel=1e-12)
    assert rep.rhs_terms["excess"] == pytest.approx(full / 0.36, rel=1e-12)
    assert rep.rhs_terms["datum"] == 0.0
    with pytest.raises(ValueError):
        ExcessDatum(lin, zero, ball, -1.0)


def test_sobolev_chi():
    assert sobolev_chi(2) == 0.5
    assert sobolev_chi(3) == pytest.approx(1 / 3)


def test_oscillation_rescaling_invariance_and_precondition():
    g = Grid.cube(2, -1, 1, 33)
    rng = np.random.default_rng(0)
    v = ScalarField(g, rng.random(g.shape) + 0.5)
    tv = ScalarField(g, rng.random(g.shape))
    datum = ExcessDatum(v, tv, Ball((0.1, 0.0), 0.7), 0.6)
    d = 0.05
    a = oscillation_check(datum, d)
    b = oscillation_check(rescale_datum(datum, d), 1.0)
    assert a.details["precondition"]
    assert a.empirical_constant == pytest.approx(b.empirical_constant, rel=1e-10)
    big = oscillation_check(datum, 100.0)
    assert not big.details["precondition"] and not big.passed
    with pytest.raises(ValueError):
        oscillation_check(datum, 0.0)


def test_degiorgi_constant_v():
    # v = c, V~ = 0: the bound is c times the root mean square, so the ratio is 1
    g = Grid.cube(2, -1, 1, 65)
    v = ScalarField(g, np.full(g.shape, 1.7))
    zero = ScalarField(g, np.zeros(g.shape))
    res = degiorgi_iterate(v, zero, (0.0, 0.0), 0.25)
    assert res.ratio == pytest.approx(1.0, rel=1e-12)
    assert res.potential_term == 0.0
    assert all(b >= a for a, b in zip(res.levels, res.levels[1:]))
    assert degiorgi_iterate(v, zero, (0.0, 0.0), 0.25, c=0.9).passed is False
    with pytest.raises(ValueError):
        degiorgi_iterate(v, zero, (0.0, 0.0), 0.25, delta=1.0)


def test_lorentz_lipschitz_requires_three_dimensions():
    u = linear_u()
    with pytest.raises(ValueError):
        check_lorentz_lipschitz(u, regularize(OperatorModel(p=2), 1e-3), u, Ball((0, 0), 0.3), Ball((0, 0), 0.6))


def test_hodge_linear_w_closed_form():
    # Dw constant: no gradient with zero trace absorbs it, so H = |Dw|^delta Dw and ratio = 1/delta
    g = Grid.cube(2, -1, 1, 17)
    X = g.coords()
    w = ScalarField(g, 0.3 * X[0] + 1.2 * X[1])
    for delta in (0.1, 0.2):
        rep = hodge_rigidity_check(w, delta, 2.5)
        assert rep.ratio == pytest.approx(1 / delta, rel=1e-9)
        assert rep.decomposition_residual <= 1e-12
        assert rep.divergence_residual <= 1e-8


def test_hodge_delta_zero_is_gradient():
    for w in (smooth_field(Grid.cube(2, -1, 1, 33), [0, i]) for i in range(3)):
        rep = hodge_rigidity_check(w, 0.0, 2.5)
        assert rep.ratio <= 1e-8
    with pytest.raises(ValueError):
        hodge_rigidity_check(w, 1.5, 2.5)


def test_hodge_ratio_bounded_on_seeded_family():
    g = Grid.cube(2, -1, 1, 33)
    ratios = [hodge_rigidity_check(smooth_field(g, [1, i]), 0.1, 2.5).ratio for i in range(4)]
    assert all(math.isfinite(r) and r > 0 for r in ratios)
    assert max(ratios) <= load_caps()["hodge"]


def test_reports_finite_on_random_fields():
    g = Grid.cube(2, -1, 1, 17)
    for f in random_fields(g, 3, seed=9):
        v = ScalarField(g, np.abs(f.values))
        rep = caccioppoli_check(ExcessDatum(v, f, Ball((0.0, 0.0), 0.8), 0.1))
        assert math.isfinite(rep.empirical_constant)
