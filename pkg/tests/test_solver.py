import math

import numpy as np
import pytest

from plaplab.catalog import manufactured, v_field
from plaplab.fields import Grid, ScalarField, VectorField
from plaplab.models import OperatorModel, regularize
from plaplab.solver import (
    BSpec,
    DirichletProblem,
    KuhnMesh,
    SolverOptions,
    coercivity_check,
    fixed_point_solve,
    simplex_kernels,
    solve_dirichlet,
    truncate_V,
    truncate_b,
)


def zero_boundary(grid):
    return ScalarField(grid, np.zeros(grid.shape))


def test_truncations():
    g = Grid.cube(2, -1, 1, 5)
    V = ScalarField(g, np.full(g.shape, 5.0))
    assert np.all(truncate_V(V, 1.0).values == 1.0)
    assert np.array_equal(truncate_V(V, 0.1).values, V.values)
    assert truncate_b(0.0, 1.0) == 0.0
    assert truncate_b(1.0, 1.0) == 0.5
    assert truncate_b(7.3, 0.0) == 7.3
    b = np.linspace(-100, 100, 11)
    assert np.all(np.abs(truncate_b(b, 0.5)) <= 2.0)
    with pytest.raises(ValueError):
        truncate_V(V, 0.0)


def test_kuhn_mesh_geometry():
    g = Grid.cube(3, 0, 1, 4)
    mesh = KuhnMesh(g, g.full_mask())
    assert len(mesh.perms) == 6
    assert mesh.vol * 6 * mesh.cells.size == pytest.approx(1.0)
    X = g.coords()
    U = (2 * X[0] - X[1] + 0.5 * X[2]).reshape(1, -1)
    Z = mesh.gradients(U)
    assert np.allclose(Z[..., 0, :], [2, -1, 0.5])


@pytest.mark.parametrize("use_numba", [False, True])
def test_kernel_backends_agree(use_numba):
    g = Grid.cube(2, 0, 1, 9)
    rng = np.random.default_rng(0)
    U = rng.standard_normal((2, g.size))
    ref = KuhnMesh(g, g.full_mask(), use_numba=False)
    mesh = KuhnMesh(g, g.full_mask(), use_numba=use_numba)
    Z = mesh.gradients(U)
    assert np.allclose(Z, ref.gradients(U), rtol=0, atol=1e-13)
    assert np.allclose(mesh.scatter(Z), ref.scatter(Z), rtol=0, atol=1e-12)
    assert simplex_kernels(use_numba) is not None


def test_problem_validation():
    g = Grid.cube(2, -1, 1, 9)
    model = regularize(OperatorModel(p=2), 1e-3)
    with pytest.raises(ValueError):
        DirichletProblem(model, zero_boundary(g), b_spec=BSpec("power", 1.5, 0.0))
    with pytest.raises(ValueError):
        BSpec("nonsense")


def test_p2_linear_boundary_exact():
    problem, exact = manufactured(2.0, 2, 17, kind="linear")
    u, rep = solve_dirichlet(problem)
    assert rep.converged
    assert np.max(np.abs(u.values - exact.values)) <= 1e-10


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_constant_gradient_is_p_harmonic(p):
    problem, exact = manufactured(p, 2, 17, kind="linear", slope=(0.4, -1.1))
    u, rep = solve_dirichlet(problem)
    assert rep.converged
    assert np.max(np.abs(u.values - exact.values)) <= 1e-9


def test_manufactured_p3_converges():
    errs = []
    for m in (9, 17, 33):
        problem, exact = manufactured(3.0, 2, m)
        u, rep = solve_dirichlet(problem)
        assert rep.converged and rep.max_energy_increase <= 0
        errs.append(np.max(np.abs(u.values - exact.values)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1


def test_energy_decreases_every_step():
    problem, _ = manufactured(4.0, 2, 17)
    u, rep = solve_dirichlet(problem)
    assert rep.energy_increments and max(rep.energy_increments) < 0
    assert all(b <= a for a, b in zip(rep.energy_trace, rep.energy_trace[1:]))


def test_nonconvergence_is_reported():
    problem, _ = manufactured(4.0, 2, 17, options=SolverOptions(max_newton=1))
    u, rep = solve_dirichlet(problem)
    assert not rep.converged and rep.message


def test_maximum_principle_p2():
    g = Grid.cube(2, -1, 1, 17)
    X = g.coords()
    bnd = ScalarField(g, np.sin(2 * X[0]) + X[1] ** 2)
    problem = DirichletProblem(regularize(OperatorModel(p=2), 1e-3), bnd)
    u, rep = solve_dirichlet(problem)
    edge = np.zeros(g.shape, bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    assert u.values.max() <= bnd.values[edge].max() + 1e-12
    assert u.values.min() >= bnd.values[edge].min() - 1e-12


def test_odd_symmetry_for_constant_b():
    g = Grid.cube(2, -1, 1, 17)
    model = regularize(OperatorModel(p=3), 1e-3)
    V = v_field(g, "random-lognormal", seed=1)
    X = g.coords()
    bnd = ScalarField(g, X[0] * X[1])
    a, _ = fixed_point_solve(DirichletProblem(model, bnd, V=V, b_spec=BSpec("const")))
    b, _ = fixed_point_solve(DirichletProblem(model, bnd.with_values(-bnd.values), V=V.with_values(-V.values),
                                              b_spec=BSpec("const")))
    assert np.allclose(a.values, -b.values, atol=1e-9)


def test_vector_uhlenbeck_system():
    g = Grid.cube(2, -1, 1, 17)
    X = g.coords()
    bnd = ScalarField(g, np.stack([X[0] ** 2 - X[1], X[0] * X[1]]))
    model = regularize(OperatorModel("Uhlenbeck", p=3), 1e-3)
    V = ScalarField(g, np.stack([np.ones(g.shape), -np.ones(g.shape)]))
    problem = DirichletProblem(model, bnd, V=V, f=V.values)
    u, rep = solve_dirichlet(problem)
    assert rep.converged and u.ncomp == 2 and rep.max_energy_increase <= 0
    fast = DirichletProblem(model, bnd, V=V, f=V.values, options=SolverOptions(use_numba=True))
    slow = DirichletProblem(model, bnd, V=V, f=V.values, options=SolverOptions(use_numba=False))
    assert np.allclose(solve_dirichlet(fast)[0].values, solve_dirichlet(slow)[0].values, atol=1e-12)


def test_fixed_point_b_zero_matches_dirichlet():
    g = Grid.cube(2, -1, 1, 17)
    model = regularize(OperatorModel(p=3), 1e-3)
    X = g.coords()
    bnd = ScalarField(g, X[0])
    V = v_field(g, "indicator", radius=0.4)
    u0, r0 = fixed_point_solve(DirichletProblem(model, bnd, V=V, b_spec=BSpec("zero")))
    u2, r2 = solve_dirichlet(DirichletProblem(model, bnd))
    assert r0.converged and np.allclose(u0.values, u2.values, atol=1e-10)
    # b = 1 enters as truncate_b(1, eps) = 1 / (1 + eps)
    u1, r1 = fixed_point_solve(DirichletProblem(model, bnd, V=V, b_spec=BSpec("const")))
    u2, r2 = solve_dirichlet(DirichletProblem(model, bnd, f=truncate_V(V, 1e-3).values / (1 + 1e-3)))
    assert r1.converged and np.allclose(u1.values, u2.values, atol=1e-8)
    zero = ScalarField(g, np.zeros(g.shape))
    u3, r3 = fixed_point_solve(DirichletProblem(model, bnd, V=zero, b_spec=BSpec("power", 1.0, 1.0)))
    u4, _ = solve_dirichlet(DirichletProblem(model, bnd))
    assert r3.converged and np.allclose(u3.values, u4.values, atol=1e-8)


def test_critical_small_contracts():
    g = Grid.cube(2, -1, 1, 17)
    model = regularize(OperatorModel(p=2), 1e-3)
    V = v_field(g, "indicator", amplitude=0.5, radius=0.5)
    opts = SolverOptions(critical_c0=1.0, critical_eps0=10.0)
    u, rep = fixed_point_solve(DirichletProblem(model, zero_boundary(g), V=V, b_spec=BSpec("power", 1.0, 1.0),
                                                options=opts))
    assert rep.converged and rep.label == "critical-small"
    assert rep.contraction_factor is not None and rep.contraction_factor < 1
    d = rep.outer_distances
    assert all(b < a for a, b in zip(d, d[1:]))


def test_divergence_detector():
    g = Grid.cube(2, -1, 1, 17)
    model = regularize(OperatorModel(p=2), 1e-3)
    V = v_field(g, "constant", amplitude=50.0)
    opts = SolverOptions(divergence_cap=10.0)
    u, rep = fixed_point_solve(DirichletProblem(model, zero_boundary(g), V=V, b_spec=BSpec("power", 1.0, 1.0),
                                                options=opts))
    assert rep.diverged and not rep.converged and "cap" in rep.message


def test_coercivity_family():
    sols = {}
    for eps in (1e-1, 1e-2, 1e-3):
        problem, _ = manufactured(3.0, 2, 17, eps=eps)
        sols[eps], _ = solve_dirichlet(problem)
    rep = coercivity_check(sols, problem)
    assert rep.variation <= 0.05 and not rep.blow_up
    assert all(m <= b for m, b in zip(rep.mass, rep.mass_bound))
    g = Grid.cube(2, -1, 1, 9)
    X = g.coords()
    bnd = ScalarField(g, X[0])
    hom = {}
    for eps in (1e-1, 1e-2):
        pr = DirichletProblem(regularize(OperatorModel(p=3), eps), bnd)
        hom[eps], _ = solve_dirichlet(pr)
    r2 = coercivity_check(hom, pr)
    assert r2.variation < 1e-10 and r2.mass == [0.0, 0.0]


def test_eps_stability():
    us = []
    for eps in (1e-1, 1e-2, 1e-3):
        problem, _ = manufactured(3.0, 2, 17, eps=eps)
        us.append(solve_dirichlet(problem)[0].values)
    d1 = np.max(np.abs(us[0] - us[1]))
    d2 = np.max(np.abs(us[1] - us[2]))
    assert d2 < d1


def test_vector_field_gradient_shape():
    g = Grid.cube(2, -1, 1, 5)
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((1, 3) + g.shape))
