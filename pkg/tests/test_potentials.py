import math

import numpy as np
import pytest

from plaplab.catalog import random_fields, v_field
from plaplab.fields import Ball, Grid, ScalarField
from plaplab.potentials import (
    dyadic_constant,
    lorentz_bound_check,
    omega,
    p_potential,
    p_potential_dyadic,
    potential_field,
    potential_sup,
    sweep_kernel,
    wolff_potential,
)


def const_field(n, points, c=1.3):
    g = Grid.cube(n, -1.0, 1.0, points)
    return ScalarField(g, np.full(g.shape, c))


def test_omega():
    assert omega(2) == pytest.approx(math.pi)
    assert omega(3) == pytest.approx(4 * math.pi / 3)


@pytest.mark.parametrize("n,points", [(2, 41), (3, 17)])
def test_constant_closed_forms_overlap_rule(n, points):
    c, R = 1.3, 0.6
    V = const_field(n, points, c)
    x = np.zeros(n)
    P = p_potential(V, x, R, rule="overlap").value
    assert P == pytest.approx(c * math.sqrt(omega(n)) * R, rel=1e-4)
    beta, p = 0.5, 2.5
    W = wolff_potential(V, x, R, beta, p, rule="overlap").value
    expect = (c * omega(n)) ** (1 / (p - 1)) * (p - 1) / (beta * p) * R ** (beta * p / (p - 1))
    assert W == pytest.approx(expect, rel=1e-4)


def test_center_rule_close_but_coarser():
    V = const_field(2, 41)
    P = p_potential(V, (0.0, 0.0), 0.6).value
    assert P == pytest.approx(1.3 * math.sqrt(math.pi) * 0.6, rel=0.15)


def test_zero_and_homogeneity():
    g = Grid.cube(2, -1, 1, 21)
    zero = ScalarField(g, np.zeros(g.shape))
    x = (0.1, -0.2)
    assert p_potential(zero, x, 0.5).value == 0.0
    assert p_potential_dyadic(zero, x, 0.5) == 0.0
    assert wolff_potential(zero, x, 0.5, 0.5, 2.0).value == 0.0
    assert potential_sup(zero, None, 0.5) == 0.0
    V = v_field(g, "random-lognormal", seed=3)
    for lam in (-2.0, 0.3):
        a = p_potential(ScalarField(g, lam * V.values), x, 0.5).value
        assert a == pytest.approx(abs(lam) * p_potential(V, x, 0.5).value, rel=1e-12)


def test_errors():
    V = const_field(2, 11)
    with pytest.raises(ValueError):
        p_potential(V, (0, 0), 0.0)
    with pytest.raises(ValueError):
        wolff_potential(V, (0, 0), 0.5, 1.0, 2.0)  # beta = n/p
    neg = ScalarField(V.grid, -V.values)
    with pytest.raises(ValueError):
        wolff_potential(neg, (0, 0), 0.5, 0.5, 2.0)


def test_monotone_in_radius():
    V = v_field(Grid.cube(2, -1, 1, 33), "indicator", radius=0.3, center=(0.2, 0.0))
    vals = [p_potential(V, (0.0, 0.0), R).value for R in (0.1, 0.2, 0.4, 0.8)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    sups = [potential_sup(V, None, R) for R in (0.1, 0.3)]
    assert sups[0] <= sups[1]


def test_quadrature_converged_in_node_count():
    V = const_field(2, 41)
    a = p_potential(V, (0.0, 0.0), 0.5, rule="overlap", per_decade=64).value
    b = p_potential(V, (0.0, 0.0), 0.5, rule="overlap", per_decade=128).value
    assert abs(a - b) <= 1e-6 * abs(a)


def test_translation_equivariance():
    g = Grid.cube(2, -2, 2, 41)
    X = g.coords()
    bump = np.exp(-np.sum(X**2, axis=0) * 8)
    shift = 5
    moved = np.roll(bump, shift, axis=0)
    a = p_potential(ScalarField(g, bump), (0.0, 0.0), 0.5).value
    b = p_potential(ScalarField(g, moved), (shift * g.h, 0.0), 0.5).value
    assert a == pytest.approx(b, rel=1e-6)


def test_wolff_riesz_double_sum():
    # beta = 1, p = 2, n = 3: int_h^R |V|(B(x,r)) r^-2 dr + tail
    # = sum_y |V(y)| h^3 (1/max(|x-y|, h) - 1/R) + V(x) h^2 / 2
    g = Grid.cube(3, -1, 1, 17)
    V = v_field(g, "random-lognormal", seed=2)
    R = 0.5
    W = wolff_potential(V, np.zeros(3), R, 1.0, 2.0).value
    X = g.coords().reshape(3, -1)
    d = np.sqrt(np.sum(X**2, axis=0))
    vals = V.values.ravel()
    h = g.h
    sel = d < R
    brute = np.sum(vals[sel] * (1 / np.maximum(d[sel], h) - 1 / R)) * h**3 + vals[d == 0][0] * h**2 / 2
    assert W == pytest.approx(brute, rel=1e-10)


def test_dyadic_inequality_random_fields():
    c_n = {2: dyadic_constant(2), 3: dyadic_constant(3)}
    assert c_n[2] == pytest.approx(math.log(2))
    for n, pts in ((2, 33), (3, 13)):
        g = Grid.cube(n, -1, 1, pts)
        for f in random_fields(g, 25, seed=n):
            x = np.zeros(n)
            lhs = c_n[n] * p_potential_dyadic(f, x, 0.4)
            assert lhs <= p_potential(f, x, 0.8).value * (1 + 1e-12)


def test_dyadic_constant_field_closed_form():
    # with R_j = 2^(1-j) R: sum_j c sqrt(omega) R_j = 2 c sqrt(omega) R (geometric), truncated at h
    V = const_field(2, 81)
    R = 0.4
    d = p_potential_dyadic(V, (0.0, 0.0), R, rule="overlap")
    radii = [R / 2**j for j in range(40) if R / 2**j >= V.grid.h]
    expect = sum(1.3 * math.sqrt(math.pi) * r for r in radii)
    assert d == pytest.approx(expect, rel=1e-6)
    assert dyadic_constant(2) * d <= p_potential(V, (0.0, 0.0), 2 * R, rule="overlap").value


def test_sweep_matches_pointwise_and_backends_agree():
    g = Grid.cube(2, -1, 1, 17)
    V = v_field(g, "random-lognormal", seed=4)
    region = Ball((0.0, 0.0), 0.3)
    field = potential_field(V, 0.25, region)
    idx = np.argwhere(np.isfinite(field))
    for i in idx[:5]:
        x = g.node(tuple(i))
        assert field[tuple(i)] == pytest.approx(p_potential(V, x, 0.25).value, rel=1e-10)
    a = potential_field(V, 0.25, region, use_numba=False)
    b = potential_field(V, 0.25, region, use_numba=True)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-13)
    threaded = potential_field(V, 0.25, region, threads=3)
    assert np.array_equal(np.nan_to_num(field), np.nan_to_num(threaded))
    assert sweep_kernel(False) is not None


def test_potential_sup_single_point():
    V = const_field(2, 41)
    assert potential_sup(V, np.array([0.0, 0.0]), 0.5) == pytest.approx(p_potential(V, (0, 0), 0.5).value)


def test_lorentz_bound_check():
    g = Grid.cube(3, -1, 1, 13)
    zero = ScalarField(g, np.zeros(g.shape))
    rep = lorentz_bound_check(zero, 0.4)
    assert rep.sup_potential == rep.hunt_bound == rep.lorentz_norm == 0.0
    ind = v_field(g, "indicator", radius=0.5)
    rep = lorentz_bound_check(ind, 0.4, region=Ball((0, 0, 0), 0.3))
    assert rep.passed and 0 < rep.ratio_hunt < math.inf and 0 < rep.ratio_lorentz < math.inf
    with pytest.raises(ValueError):
        lorentz_bound_check(v_field(Grid.cube(2, -1, 1, 9), "constant"), 0.4)
