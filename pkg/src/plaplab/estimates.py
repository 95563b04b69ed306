"""Empirical constants for the a priori inequalities.

Each check evaluates both sides of one inequality on grid data and reports
the smallest constant that makes it hold, ``lhs / sum(rhs_terms)``, next to a
frozen acceptance cap.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .fields import Ball, GeometryError, Grid, ScalarField, _scalar_values, gradient, lp_norm, region_mask, sup_norm
from .lorentz import LorentzParams, lorentz_norm, rearrange
from .models import GrowthProfile, RegularizedModel
from .potentials import p_potential, potential_field
from .solver import KuhnMesh, _cg

GRADIENT_VARIANTS = ("apl", "aes1", "aes2", "general-growth")


# ---------------------------------------------------------------------------
# caps


def load_caps(path=None):
    """Acceptance caps: the bundled table, or a JSON file of the same shape."""
    if path is None:
        text = resources.files("plaplab").joinpath("data/caps.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = json.loads(text)
    return {k: float(v["cap"]) if isinstance(v, dict) else float(v) for k, v in table.items() if not k.startswith("_")}


# ---------------------------------------------------------------------------
# reports


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs_terms: dict
    empirical_constant: float
    cap: float | None = None
    passed: bool = True
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def _report(name, lhs, terms, cap, **details):
    total = float(sum(terms.values()))
    if lhs <= 0:
        const = 0.0
    elif total > 0:
        const = lhs / total
    else:
        const = math.inf
    values = [lhs, total, *terms.values()]
    ok = all(math.isfinite(v) for v in values) and math.isfinite(const)
    if cap is not None:
        ok = ok and const <= cap
    return EstimateReport(name, float(lhs), {k: float(v) for k, v in terms.items()}, float(const), cap, bool(ok), details)


# ---------------------------------------------------------------------------
# Bernstein quantity and the modified datum


def _s_of(model):
    return model.s_eps if isinstance(model, RegularizedModel) else model.s


def _base(model):
    return model.base if isinstance(model, RegularizedModel) else model


def grad_magnitude(u):
    """Nodal ``|Du|`` as a scalar field on the mask of ``u``."""
    return ScalarField(u.grid, gradient(u).magnitude(), u.mask)


def bernstein_v(u, model):
    """``(s_eps^2 + |Du|^2)^(p/2)``, or ``h(|Du|) |Du|`` for general growth."""
    g = gradient(u).magnitude()
    base = _base(model)
    if base.variant == "GeneralGrowth":
        prof = GrowthProfile(base.profile, base.p)
        vals = np.where(g > 0, prof.h(g) * g, 0.0)
    else:
        vals = (_s_of(model) ** 2 + g**2) ** (base.p / 2)
    return ScalarField(u.grid, vals, u.mask)


def tilde_V(V, u, model, ball, variant="standard", b_spec=None):
    """``(s_eps^2 + ||Du||^2_{L^inf(B)})^(1/2) V``; the b-variant uses
    ``(s + Gamma + ||Du||_{L^inf(B)})^(q+1) V``."""
    L = sup_norm(grad_magnitude(u), ball)
    if variant == "standard":
        fac = math.sqrt(_s_of(model) ** 2 + L**2)
    elif variant == "b":
        if b_spec is None:
            raise ValueError("the b-variant needs b_spec")
        fac = (_base(model).s + b_spec.Gamma + L) ** (b_spec.q + 1)
    else:
        raise ValueError(f"unknown tilde_V variant {variant!r}")
    return V.with_values(fac * V.values)


@dataclass
class ExcessDatum:
    v: ScalarField
    tildeV: ScalarField
    ball: Ball
    k: float = 0.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("level k must be nonnegative")
        vals = _scalar_values(self.v)[self.v.mask]
        if np.any(vals < 0):
            raise ValueError("v must be nonnegative")


def _excess(v, k):
    return v.with_values(np.maximum(_scalar_values(v) - k, 0.0))


def _ball_sum(values, grid, mask, ball):
    sel = mask & grid.ball_mask(ball)
    if not np.any(sel):
        raise GeometryError(f"ball {ball} contains no grid point of the mask")
    return float(np.sum(values[sel]) * grid.cell_volume), sel


# ---------------------------------------------------------------------------
# Caccioppoli and oscillation


def caccioppoli_check(datum, cap=None):
    """``int_{B/2} |D(v-k)_+|^2`` against ``R^-2 int_B (v-k)_+^2`` and ``int_B |V~|^2``."""
    v, ball = datum.v, datum.ball
    grid, R = v.grid, ball.radius
    w = _excess(v, datum.k)
    dw2 = gradient(w).magnitude() ** 2
    lhs, _ = _ball_sum(dw2, grid, v.mask, ball.scaled(0.5))
    ex, _ = _ball_sum(_scalar_values(w) ** 2, grid, v.mask, ball)
    tv, _ = _ball_sum(datum.tildeV.magnitude() ** 2, grid, v.mask, ball)
    return _report("caccioppoli", lhs, {"excess": ex / R**2, "datum": tv}, cap, k=datum.k)


def sobolev_chi(n):
    """``chi = 2/t`` with ``t = 2n/(n-2)`` for ``n > 2`` and ``t = 4`` for ``n = 2``."""
    t = 2.0 * n / (n - 2) if n > 2 else 4.0
    return 2.0 / t


def oscillation_check(datum, d, chi=None, cap=None):
    """Both sides of the oscillation improvement at level ``k`` and height ``d``.

    If ``|B/2 ∩ {v > k}| <= d^-2 int_{B/2} (v-k)_+^2`` fails the report is
    returned with ``passed = False`` and ``details['precondition'] = False``.
    """
    if not d > 0:
        raise ValueError("d must be positive")
    v, ball = datum.v, datum.ball
    grid, R, n = v.grid, ball.radius, v.grid.dim
    chi = sobolev_chi(n) if chi is None else chi
    w2 = _scalar_values(_excess(v, datum.k)) ** 2
    inner, sel = _ball_sum(w2, grid, v.mask, ball.scaled(0.5))
    level_set = float(np.count_nonzero(sel & (_scalar_values(v) > datum.k)) * grid.cell_volume)
    pre = level_set <= inner / d**2
    outer, _ = _ball_sum(w2, grid, v.mask, ball)
    tv, _ = _ball_sum(datum.tildeV.magnitude() ** 2, grid, v.mask, ball)
    lhs = (inner / (d**2 * R**n)) ** (chi / 2)
    terms = {"excess": math.sqrt(outer / (d**2 * R**n)), "datum": math.sqrt(tv / (d**2 * R ** (n - 2)))}
    rep = _report("oscillation", lhs, terms, cap, k=datum.k, d=d, chi=chi, precondition=bool(pre))
    if not pre:
        rep.passed = False
    return rep


def rescale_datum(datum, d):
    """The datum seen on the unit ball: ``w(y) = v(x0+Ry)/d``, ``W(y) = R V~(x0+Ry)/d``, level ``k/d``."""
    g, ball = datum.v.grid, datum.ball
    R, x0 = ball.radius, np.asarray(ball.center, float)
    grid = Grid(g.dim, g.shape, g.spacing / R, tuple((np.asarray(g.origin) - x0) / R))
    w = ScalarField(grid, datum.v.values / d, datum.v.mask)
    W = ScalarField(grid, R * datum.tildeV.values / d, datum.tildeV.mask)
    return ExcessDatum(w, W, Ball(tuple(np.zeros(g.dim)), 1.0), datum.k / d)


# ---------------------------------------------------------------------------
# De Giorgi iteration


@dataclass
class DeGiorgiResult:
    levels: list
    value: float
    average_term: float
    potential_term: float
    bound: float
    ratio: float
    passed: bool
    c: float | None

    def as_dict(self):
        return dict(self.__dict__)


def degiorgi_iterate(v, tildeV, x, R, delta=0.5, c=None):
    """Levels ``k_{j+1} = k_j + (delta^-2 R_j^-n int_{B_{j+1}} (v-k_j)_+^2)^(1/2)``.

    ``B_j = B(x, 2^(1-j) R)``; the recursion stops once ``R_j < 4h`` or the
    increment drops below ``1e-12``.  The bound is
    ``c (avg_{B(x,R)} v^2)^(1/2) + c P^V~(x, 2R)``; ``ratio`` is the smallest
    ``c`` that covers ``v(x)``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    grid = v.grid
    n = grid.dim
    idx = grid.nearest_index(x)
    x = grid.node(idx)
    vals = _scalar_values(v)
    if np.any(vals[v.mask] < 0):
        raise ValueError("v must be nonnegative")
    levels = [0.0]
    j = 0
    while True:
        Rj = 2.0 ** (1 - j) * R
        if Rj < 4 * grid.h:
            break
        sel = v.mask & grid.ball_mask(Ball(tuple(x), Rj / 2))
        if not np.any(sel):
            break
        mass = float(np.sum(np.maximum(vals[sel] - levels[-1], 0.0) ** 2) * grid.cell_volume)
        inc = math.sqrt(mass / (delta**2 * Rj**n))
        levels.append(levels[-1] + inc)
        j += 1
        if inc < 1e-12:
            break
    avg = math.sqrt(float(np.mean(vals[v.mask & grid.ball_mask(Ball(tuple(x), R))] ** 2)))
    pot = p_potential(tildeV, x, 2 * R).value
    value = float(vals[tuple(idx)])
    base = avg + pot
    ratio = 0.0 if value <= 0 else (value / base if base > 0 else math.inf)
    bound = (c if c is not None else ratio) * base
    passed = math.isfinite(ratio) and (c is None or value <= c * base * (1 + 1e-12))
    return DeGiorgiResult(levels, value, avg, pot, float(bound), float(ratio), bool(passed), c)


# ---------------------------------------------------------------------------
# gradient bounds


def check_gradient_bound(u, model, V, ball, variant="apl", b_spec=None, t=None, cap=None, threads=1):
    """Sup of ``|Du|`` on ``B_{R/2}`` against the right-hand side of the chosen bound.

    ``t`` replaces the exponent ``p`` of the averaged term (default ``p``).
    ``V`` may be ``None`` for homogeneous problems.
    """
    if variant not in GRADIENT_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {GRADIENT_VARIANTS}")
    base = _base(model)
    p = base.p
    t = p if t is None else float(t)
    s = _s_of(model)
    R = ball.radius
    mag = grad_magnitude(u)
    g = _scalar_values(mag)
    inner_sel = u.mask & u.grid.ball_mask(ball.scaled(0.5))
    outer_sel = u.mask & u.grid.ball_mask(ball)
    if not np.any(inner_sel):
        raise GeometryError("B_{R/2} contains no grid point")

    def sup_potential():
        if V is None:
            return 0.0
        return float(np.nanmax(potential_field(V, R, outer_sel, threads)))

    if variant == "general-growth":
        prof = GrowthProfile(base.profile, base.p) if base.variant == "GeneralGrowth" else GrowthProfile("power", p)
        vh = np.where(g > 0, prof.h(g) * g, 0.0)
        lhs = float(np.max(vh[inner_sel]))
        terms = {
            "average": math.sqrt(float(np.mean(vh[outer_sel]))),
            "potential": math.sqrt(sup_potential()),
            "constant": 1.0,
        }
        return _report("gradient:general-growth", lhs, terms, cap, radius=R)
    lhs = float(np.max(g[inner_sel]))
    gamma = b_spec.Gamma if (b_spec is not None and variant != "apl") else 0.0
    avg = float(np.mean((s + gamma + g[outer_sel]) ** t)) ** (1.0 / t)
    terms = {"average": avg}
    if variant == "apl":
        terms["potential"] = sup_potential() ** (1.0 / (p - 1))
    elif variant == "aes2":
        if b_spec is None:
            raise ValueError("aes2 needs b_spec")
        terms["potential"] = sup_potential() ** (1.0 / (p - b_spec.q + 1))
    return _report(f"gradient:{variant}", lhs, terms, cap, radius=R, t=t)


def check_lorentz_lipschitz(u, model, V, inner, outer, cap=None):
    """``||Du||_{L^inf(inner)}`` against ``||Du||_{L^p(outer)} + ||V||_{L(n,1)(outer)} + s |outer|^(1/p)``."""
    grid = u.grid
    if grid.dim < 3:
        raise ValueError("the Lorentz-space Lipschitz bound is checked for n = 3")
    base = _base(model)
    p = base.p
    mag = grad_magnitude(u)
    lhs = sup_norm(mag, inner)
    osel = u.mask & region_mask(grid, outer)
    lp = lp_norm(mag, p, osel)
    Vo = ScalarField(grid, _scalar_values(V) * osel, osel)
    vn = lorentz_norm(rearrange(Vo), LorentzParams(grid.dim, 1.0))
    vol = float(np.count_nonzero(osel) * grid.cell_volume)
    terms = {"gradient": lp, "lorentz": vn, "s_term": _s_of(model) * vol ** (1.0 / p)}
    return _report("lorentz-lipschitz", lhs, terms, cap)


# ---------------------------------------------------------------------------
# Hodge rigidity


@dataclass
class HodgeReport:
    delta: float
    t: float
    H_norm: float
    grad_norm: float
    ratio: float
    decomposition_residual: float
    divergence_residual: float
    cap: float | None = None
    passed: bool = True

    def as_dict(self):
        return dict(self.__dict__)


def _simplex_norm(mesh, Z, r):
    mag = np.sqrt(np.sum(Z * Z, axis=(-2, -1)))
    return float(np.sum(mag**r) * mesh.vol) ** (1.0 / r)


def hodge_rigidity_check(w, delta, t, phi_boundary=None, cap=None, rtol=1e-12, use_numba=None):
    """Split ``|Dw|^delta Dw = D phi + H`` and compare ``||H||_{t/(1+delta)}`` with ``delta ||Dw||_t^(1+delta)``.

    ``Dw`` is the piecewise-constant gradient of the piecewise-linear
    interpolant of ``w``; ``phi`` is the Galerkin projection of the power
    field onto gradients with boundary values ``phi_boundary`` (zero by
    default), so ``H`` is discretely divergence free.
    """
    if not (-1 < delta < t - 1):
        raise ValueError(f"need -1 < delta < t - 1, got delta={delta}, t={t}")
    mesh = KuhnMesh(w.grid, w.mask, use_numba)
    N = w.ncomp
    Wv = np.where(mesh.active[None], w.components(), 0.0).reshape(N, -1)
    Z = mesh.gradients(Wv)
    mag = np.sqrt(np.sum(Z * Z, axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(mag > 0, mag**delta, 0.0) if delta != 0 else np.ones_like(mag)
    G = fac[..., None, None] * Z
    n = w.grid.dim
    eye = np.broadcast_to(np.eye(n), (len(mesh.perms), mesh.cells.size, N, n, n))
    diag = mesh.jacobi(eye)

    def K(X):
        return mesh.scatter(mesh.gradients(X))

    Phi0 = np.zeros((N, mesh.size))
    if phi_boundary is not None:
        pb = np.asarray(phi_boundary, float).reshape(N, -1)
        Phi0[:, mesh.dirichlet.ravel()] = pb[:, mesh.dirichlet.ravel()]
    rhs = mesh.scatter(G) - K(Phi0)
    X, _, _ = _cg(mesh, K, diag, rhs, rtol)
    Phi = Phi0 + X
    H = G - mesh.gradients(Phi)
    r = t / (1 + delta)
    Hn = _simplex_norm(mesh, H, r)
    Gn = _simplex_norm(mesh, Z, t)
    recon = G - mesh.gradients(Phi) - H
    dres = float(np.sqrt(np.sum(recon**2) * mesh.vol))
    # discrete divergence of H in the dual (energy) norm: sqrt(r^T K^-1 r)
    res = mesh.scatter(H)
    res[:, ~mesh.unknown.ravel()] = 0.0
    Y, _, _ = _cg(mesh, K, diag, res, 1e-10)
    div_res = math.sqrt(max(float(np.sum(res * Y)), 0.0))
    if delta == 0:
        ratio = Hn / Gn if Gn > 0 else 0.0
    else:
        denom = abs(delta) * Gn ** (1 + delta)
        ratio = Hn / denom if denom > 0 else (0.0 if Hn == 0 else math.inf)
    ok = math.isfinite(ratio) and (cap is None or delta == 0 or ratio <= cap)
    return HodgeReport(float(delta), float(t), Hn, Gn, float(ratio), dres, div_res, cap, bool(ok))
