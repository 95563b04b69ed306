"""Named right-hand sides and manufactured problems.

V fields
    constant        V = A
    indicator       V = A 1_{B(x0, r)}
    power           V = A |x - x0|^(-alpha); the node at x0 gets the cell average
    random-lognormal V = A exp(sigma g(x)), g a seeded sum of Fourier modes
                    normalized to unit sup

Manufactured solutions
    quadratic       u* = A |x|^2 / 2, forcing computed for the regularized flux
                    actually solved: f = -A (n g(t) + 2 A^2 |x|^2 g'(t)),
                    t = eps^2 + A^2 |x|^2 (at A = 1, eps = s = 0 this is
                    -(n+p-2)|x|^(p-2))
    linear          u* = z . x, f = 0 (exact for every p)
"""
from __future__ import annotations

import math

import numpy as np

from .fields import Grid, ScalarField
from .models import OperatorModel, regularize
from .solver import BSpec, DirichletProblem, SolverOptions

V_KINDS = ("constant", "indicator", "power", "random-lognormal")
MANUFACTURED = ("quadratic", "linear")


def _cell_average_power(h, n, alpha, sub=16):
    """Average of ``|y|^-alpha`` over the cell ``[-h/2, h/2]^n`` by midpoint subdivision."""
    t = (np.arange(sub) + 0.5) / sub - 0.5
    pts = np.stack(np.meshgrid(*([t * h] * n), indexing="ij"))
    return float(np.mean(np.sqrt(np.sum(pts**2, axis=0)) ** (-alpha)))


def v_field(grid, kind="constant", amplitude=1.0, center=None, radius=0.5, alpha=0.5, seed=0, modes=6,
            sigma=0.5, mask=None):
    if kind not in V_KINDS:
        raise ValueError(f"unknown V kind {kind!r}; expected one of {V_KINDS}")
    X = grid.coords()
    x0 = np.zeros(grid.dim) if center is None else np.asarray(center, float)
    shape = (grid.dim,) + (1,) * grid.dim
    r = np.sqrt(np.sum((X - x0.reshape(shape)) ** 2, axis=0))
    if kind == "constant":
        vals = np.full(grid.shape, float(amplitude))
    elif kind == "indicator":
        vals = amplitude * (r < radius).astype(float)
    elif kind == "power":
        with np.errstate(divide="ignore"):
            vals = amplitude * np.where(r > 0, r, np.inf) ** (-alpha)
        hit = r < 1e-12 * grid.h
        if np.any(hit):
            vals[hit] = amplitude * _cell_average_power(grid.h, grid.dim, alpha)
    else:
        rng = np.random.default_rng(seed)
        span = grid.upper() - grid.lower()
        g = np.zeros(grid.shape)
        for _ in range(modes):
            k = rng.integers(-3, 4, grid.dim)
            phase = rng.uniform(0, 2 * math.pi)
            weight = rng.standard_normal()
            arg = sum(2 * math.pi * k[a] * (X[a] - grid.lower()[a]) / span[a] for a in range(grid.dim))
            g += weight * np.cos(arg + phase)
        top = np.max(np.abs(g))
        g = g / top if top > 0 else g
        vals = amplitude * np.exp(sigma * g)
    return ScalarField(grid, vals, mask)


def random_fields(grid, count, seed, distinct_levels=None):
    """Seeded family of fields with repeated values (so level sets have mass).

    Values are rounded to ``distinct_levels`` quantiles of a lognormal draw,
    and a random subset is zeroed.
    """
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        vals = rng.lognormal(0.0, 1.0, grid.shape)
        levels = distinct_levels or int(rng.integers(3, 40))
        q = np.quantile(vals, np.linspace(0, 1, levels))
        vals = q[np.clip(np.searchsorted(q, vals), 0, levels - 1)]
        vals[rng.random(grid.shape) < 0.2] = 0.0
        out.append(ScalarField(grid, vals))
    return out


def manufactured(p, n=2, points=33, eps=1e-3, kind="quadratic", s=0.0, slope=None, options=None,
                 lower=-1.0, upper=1.0, amplitude=1.0):
    """Grid, exact solution and Dirichlet problem of a manufactured family member.

    Returns ``(problem, exact)`` where ``exact`` is a ScalarField and the
    problem's ``V`` holds the forcing (so ``-div a_eps(Du*) = V``).
    """
    if kind not in MANUFACTURED:
        raise ValueError(f"unknown manufactured solution {kind!r}; expected one of {MANUFACTURED}")
    grid = Grid.cube(n, lower, upper, points)
    X = grid.coords()
    model = regularize(OperatorModel(p=p, s=s), eps)
    if kind == "quadratic":
        r2 = np.sum(X**2, axis=0)
        A = float(amplitude)
        exact = 0.5 * A * r2
        prof = model.base.radial_profile()
        t = A**2 * r2 + eps**2
        f = -A * (n * prof.g(t) + 2.0 * A**2 * r2 * prof.dg(t))
    else:
        z = np.ones(n) / math.sqrt(n) if slope is None else np.asarray(slope, float)
        exact = amplitude * np.tensordot(z, X, axes=1)
        f = np.zeros(grid.shape)
    u_star = ScalarField(grid, exact)
    problem = DirichletProblem(model, u_star, V=ScalarField(grid, f), f=f, options=options or SolverOptions())
    return problem, u_star


def smooth_field(grid, seed, modes=6, vanish=True):
    """Seeded smooth field: a sum of Fourier modes, times a bump vanishing on the box boundary."""
    g = np.log(v_field(grid, "random-lognormal", seed=seed, modes=modes, sigma=1.0).values)
    if vanish:
        X = grid.coords()
        lo, hi = grid.lower(), grid.upper()
        for a in range(grid.dim):
            g = g * (X[a] - lo[a]) * (hi[a] - X[a]) * 4.0 / (hi[a] - lo[a]) ** 2
    return ScalarField(grid, g)


def b_spec(law="power", q=0.0, Gamma=0.0):
    return BSpec(law, q, Gamma)


def model_from(variant="pLaplace", p=2.0, s=0.0, nu=1.0, L=1.0, profile="power", eps=None, method="structure"):
    base = OperatorModel(variant, p, s, nu, L, profile)
    return regularize(base, eps, method) if eps else base


def sample_centers(grid, ball, count, seed):
    """``count`` distinct seeded grid nodes strictly inside ``ball``."""
    sel = np.argwhere(grid.ball_mask(ball))
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(sel), size=min(count, len(sel)), replace=False)
    return [grid.node(tuple(sel[i])) for i in np.sort(pick)]
