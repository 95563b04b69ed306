"""Radius-integrated potentials of a density sampled on a grid.

Both potentials share one shape,

    int_0^R (M(rho) / rho^(n - sigma))^theta drho / rho,

where ``M(rho)`` is the mass of the density in ``B(x, rho)``:

* ``P^V``: density ``|V|^2``, ``sigma = 2``, ``theta = 1/2``;
* Wolff: density ``|V|``, ``sigma = beta p``, ``theta = 1/(p-1)``.

The density is constant on the cell around each node and zero outside the
mask and the grid.  Two ball rules are offered.  ``center`` counts a cell when
its node lies strictly inside the ball; ``M`` is then a step function of
``rho`` and the radial integral is evaluated exactly between steps.
``overlap`` weighs each cell by the exact volume of its intersection with the
ball and integrates with composite Simpson on log-spaced radii.  Below
``rho_min = h`` the density is taken constant, so ``M ~ rho^n`` there and the
piece ``(0, h)`` contributes ``I(h) / (sigma theta)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _accel
from .fields import Ball, GeometryError, ScalarField, _scalar_values, region_mask
from .lorentz import LorentzParams, lorentz_norm, maximal_power_integral, rearrange

NODES_PER_DECADE = 64
BALL_RULES = ("center", "overlap")


def omega(n):
    """Volume of the unit ball in ``R^n``."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


@dataclass
class PotentialCurve:
    center: np.ndarray
    R: float
    radii: np.ndarray
    integrand: np.ndarray
    value: float
    kind: str = "P"


@dataclass(frozen=True)
class _Kernel:
    sigma: float
    theta: float
    n: int

    @property
    def expo(self):
        return -(self.n - self.sigma) * self.theta

    def integrand(self, M, rho):
        """``I(rho) = (M / rho^(n-sigma))^theta`` (to be integrated against drho/rho)."""
        return (np.maximum(M, 0.0) / rho ** (self.n - self.sigma)) ** self.theta

    def tail(self, M_h, h):
        return float(self.integrand(M_h, h)) / (self.sigma * self.theta)

    def piece(self, M, a, b):
        """``int_a^b M^theta rho^(expo-1) drho`` for constant ``M``."""
        e = self.expo
        w = np.maximum(M, 0.0) ** self.theta
        if e == 0:
            return w * np.log(b / a)
        return w * (b**e - a**e) / e


# ---------------------------------------------------------------------------
# densities and geometry


def _density(V, power):
    vals = np.abs(_scalar_values(V)) ** power
    return np.where(V.mask, vals, 0.0)


def _check_radius(R):
    if not (R > 0 and math.isfinite(R)):
        raise ValueError(f"radius must be positive and finite, got {R}")


def _box(grid, x, R):
    """Index ranges (possibly beyond the grid) of nodes within ``R`` of ``x`` per axis."""
    x = np.asarray(x, float)
    lo = np.floor((x - R - grid.lower()) / grid.h).astype(int)
    hi = np.ceil((x + R - grid.lower()) / grid.h).astype(int) + 1
    return lo, hi


def _padded_slice(dens, lo, hi):
    """``dens[lo:hi]`` per axis with zeros beyond the grid."""
    shape = dens.shape
    out = np.zeros(tuple(hi - lo))
    src, dst = [], []
    for a in range(dens.ndim):
        s0, s1 = max(lo[a], 0), min(hi[a], shape[a])
        if s1 <= s0:
            return out
        src.append(slice(s0, s1))
        dst.append(slice(s0 - lo[a], s1 - lo[a]))
    out[tuple(dst)] = dens[tuple(src)]
    return out


def _log_radii(h, R, per_decade=NODES_PER_DECADE):
    """Even number of log-spaced intervals from ``h`` to ``R`` (inclusive)."""
    if R <= h:
        return np.array([R])
    m = max(2, int(math.ceil(per_decade * math.log10(R / h))))
    m += m % 2
    return np.exp(np.linspace(math.log(h), math.log(R), m + 1))


# ---------------------------------------------------------------------------
# center rule


def _center_steps(dens, grid, x, R):
    """Sorted distinct distances ``d_g < R`` and cumulative masses through each."""
    lo, hi = _box(grid, x, R)
    block = _padded_slice(dens, lo, hi) * grid.cell_volume
    axes = [grid.origin[a] + grid.h * np.arange(lo[a], hi[a]) - x[a] for a in range(grid.dim)]
    d2 = sum(np.meshgrid(*[ax**2 for ax in axes], indexing="ij"))
    d = np.sqrt(d2).ravel()
    keep = d < R
    d, m = d[keep], block.ravel()[keep]
    order = np.argsort(d, kind="stable")
    d, m = d[order], m[order]
    dist, start = np.unique(d, return_index=True)
    cum = np.cumsum(m)
    end = np.r_[start[1:], d.size] - 1
    return dist, cum[end]


def _mass_at(dist, cum, rho):
    """``M(rho)`` with strict inclusion ``d < rho``."""
    k = np.searchsorted(dist, rho, side="left")
    return np.where(k > 0, np.r_[0.0, cum][k], 0.0)


def _center_value(dist, cum, kern, h, R):
    if dist.size == 0:
        return 0.0
    rmin = min(h, R)
    total = kern.tail(_mass_at(dist, cum, rmin), rmin)
    edges = np.r_[dist, R]
    a = np.maximum(edges[:-1], rmin)
    b = np.minimum(edges[1:], R)
    live = b > a
    if np.any(live):
        total += float(np.sum(kern.piece(cum[live], a[live], b[live])))
    return total


# ---------------------------------------------------------------------------
# overlap rule


def _disk_corner(X, Y, r):
    """Area of ``{|(x,y)| < r, x < X, y < Y}`` (disk centered at the origin)."""
    r = np.asarray(r, float)
    X = np.broadcast_to(X, np.broadcast(X, Y, r).shape)
    Y = np.broadcast_to(Y, X.shape)
    r = np.broadcast_to(r, X.shape)
    rr = np.where(r > 0, r, 1.0)

    def S(x):
        # int_{0}^{x} sqrt(r^2 - t^2) dt
        xc = np.clip(x, -rr, rr)
        return 0.5 * (xc * np.sqrt(np.maximum(rr**2 - xc**2, 0.0)) + rr**2 * np.arcsin(xc / rr))

    Xp = np.clip(X, -rr, rr)
    base = S(Xp) - S(-rr)
    yc = np.clip(Y, -rr, rr)
    xc = np.sqrt(np.maximum(rr**2 - yc**2, 0.0))
    # |x| > xc: the chord is clipped by the circle, contributes sign(Y) w(x)
    outer = (S(np.minimum(Xp, -xc)) - S(-rr)) + np.maximum(S(Xp) - S(xc), 0.0)
    inner = np.clip(np.minimum(Xp, xc) - (-xc), 0.0, None)
    clamp = np.sign(Y) * outer + Y * inner
    out = base + clamp
    return np.where(r > 0, np.maximum(out, 0.0), 0.0)


_CS_T, _CS_W = np.polynomial.legendre.leggauss(16)


def _ball_corner(X, Y, Z, r):
    """Volume of ``{|(x,y,z)| < r, x < X, y < Y, z < Z}``.

    Slices in ``z`` are disk corners; the ``z``-integral is split where the
    slice radius crosses ``|X|``, ``|Y|`` or ``|(X,Y)|`` and each piece is
    integrated by Gauss-Legendre after a cosine substitution.
    """
    X, Y, Z = np.broadcast_arrays(X, Y, Z)
    Zp = np.clip(Z, -r, r)
    knots = [np.full(X.shape, -r), Zp]
    for c2 in (X**2, Y**2, X**2 + Y**2):
        b = np.sqrt(np.maximum(r * r - c2, 0.0))
        knots += [np.clip(-b, -r, Zp), np.clip(b, -r, Zp)]
    knots = np.sort(np.stack(knots, axis=-1), axis=-1)
    a, b = knots[..., :-1], knots[..., 1:]
    # z = (a+b)/2 - (b-a)/2 cos(pi (t+1)/2)
    phi = 0.5 * math.pi * (_CS_T + 1.0)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    z = mid[..., None] - half[..., None] * np.cos(phi)
    jac = half[..., None] * np.sin(phi) * (0.5 * math.pi)
    rz = np.sqrt(np.maximum(r * r - z * z, 0.0))
    area = _disk_corner(X[..., None, None], Y[..., None, None], rz)
    return np.sum(area * jac * _CS_W, axis=(-2, -1))


def _overlap_weights(grid, x, rho, lo, hi):
    """Exact cell-ball intersection volumes for the node box ``[lo, hi)``."""
    edges = [grid.origin[a] + grid.h * (np.arange(lo[a], hi[a] + 1) - 0.5) - x[a] for a in range(grid.dim)]
    if grid.dim == 2:
        X, Y = np.meshgrid(*edges, indexing="ij")
        C = _disk_corner(X, Y, rho)
    else:
        X, Y, Z = np.meshgrid(*edges, indexing="ij")
        C = _ball_corner(X, Y, Z, rho)
    for a in range(grid.dim):
        C = np.diff(C, axis=a)
    return C


def _overlap_mass(dens, grid, x, rho):
    lo, hi = _box(grid, x, rho)
    block = _padded_slice(dens, lo, hi)
    return float(np.sum(block * _overlap_weights(grid, x, rho, lo, hi)))


def _simpson_log(I, radii):
    """Composite Simpson for ``int I(rho) drho/rho`` on log-uniform radii."""
    if radii.size < 3:
        return 0.0
    du = math.log(radii[1] / radii[0])
    w = np.ones(radii.size)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return float(du / 3.0 * np.sum(w * I))


# ---------------------------------------------------------------------------
# public potentials


def _potential(dens, grid, x, R, kern, rule, per_decade, kind):
    _check_radius(R)
    if rule not in BALL_RULES:
        raise ValueError(f"unknown ball rule {rule!r}; expected one of {BALL_RULES}")
    x = np.asarray(x, float)
    h = grid.h
    radii = _log_radii(h, R, per_decade)
    if rule == "center":
        dist, cum = _center_steps(dens, grid, x, R)
        M = _mass_at(dist, cum, radii) if dist.size else np.zeros_like(radii)
        value = _center_value(dist, cum, kern, h, R)
    else:
        M = np.array([_overlap_mass(dens, grid, x, r) for r in radii])
        if R <= h:
            # the density is constant below one cell: M(R) = M_cell (R/h)^n
            value = kern.tail(M[0], R)
        else:
            value = kern.tail(M[0], h) + _simpson_log(kern.integrand(M, radii), radii)
    I = kern.integrand(M, radii)
    return PotentialCurve(x, float(R), radii, I / radii, float(value), kind)


def p_potential(V, x, R, rule="center", per_decade=NODES_PER_DECADE):
    """``P^V(x, R) = int_0^R (|V|^2(B(x,rho)) / rho^(n-2))^(1/2) drho/rho``."""
    kern = _Kernel(2.0, 0.5, V.grid.dim)
    return _potential(_density(V, 2), V.grid, x, R, kern, rule, per_decade, "P")


def wolff_potential(V, x, R, beta, p, rule="center", per_decade=NODES_PER_DECADE):
    """``W(x, R) = int_0^R (|V|(B(x,rho)) / rho^(n - beta p))^(1/(p-1)) drho/rho``."""
    n = V.grid.dim
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if not (0 < beta < n / p):
        raise ValueError(f"need 0 < beta < n/p = {n / p:g}, got beta={beta}")
    comps = V.components()
    if comps.shape[0] == 1 and np.any(comps[0][V.mask] < 0):
        raise ValueError("the Wolff potential needs a nonnegative density")
    kern = _Kernel(beta * p, 1.0 / (p - 1.0), n)
    return _potential(_density(V, 1), V.grid, x, R, kern, rule, per_decade, "Wolff")


def p_potential_dyadic(V, x, R, rule="center"):
    """``sum_{j>=1} (|V|^2(B(x,R_j)) / R_j^(n-2))^(1/2)`` with ``R_j = 2^(1-j) R >= h``."""
    _check_radius(R)
    grid = V.grid
    dens = _density(V, 2)
    x = np.asarray(x, float)
    n = grid.dim
    radii = []
    r = float(R)
    while r >= grid.h:
        radii.append(r)
        r *= 0.5
    if not radii:
        return 0.0
    radii = np.array(radii)
    if rule == "center":
        dist, cum = _center_steps(dens, grid, x, R)
        M = _mass_at(dist, cum, radii) if dist.size else np.zeros_like(radii)
    else:
        M = np.array([_overlap_mass(dens, grid, x, rr) for rr in radii])
    return float(np.sum(np.sqrt(M / radii ** (n - 2))))


def dyadic_constant(n):
    """``log 2 / 2^((n-2)/2)``: the factor turning the dyadic sum into a lower bound."""
    return math.log(2.0) / 2.0 ** ((n - 2) / 2)


# ---------------------------------------------------------------------------
# sweeps over grid centers (center rule)


def _offsets(grid, R):
    """Integer offsets with ``|o| h < R`` grouped by equal length."""
    m = int(math.ceil(R / grid.h))
    rng = np.arange(-m, m + 1)
    mesh = np.meshgrid(*([rng] * grid.dim), indexing="ij")
    off = np.stack([a.ravel() for a in mesh], axis=1)
    k2 = np.sum(off**2, axis=1)
    keep = np.sqrt(k2) * grid.h < R
    off, k2 = off[keep], k2[keep]
    order = np.lexsort(tuple(off[:, a] for a in reversed(range(grid.dim))) + (k2,))
    off, k2 = off[order], k2[order]
    uniq, start = np.unique(k2, return_index=True)
    return off, np.r_[start, k2.size].astype(np.int64), np.sqrt(uniq) * grid.h, m


def _sweep_py(D, centers, deltas, gstart, gdist, R, h, expo, theta, sigma, out):
    # reference loop; compiled by numba when available
    ng = gdist.size
    for ic in range(centers.size):
        c = centers[ic]
        M = 0.0
        val = 0.0
        for g in range(ng):
            for k in range(gstart[g], gstart[g + 1]):
                M += D[c + deltas[k]]
            if g == 0:
                rmin = h if h < R else R
                if M > 0.0:
                    val += (M / rmin ** (-expo / theta)) ** theta / (sigma * theta)
            a = gdist[g] if gdist[g] > h else h
            b = gdist[g + 1] if g + 1 < ng else R
            if b > R:
                b = R
            if b > a and M > 0.0:
                w = M**theta
                if expo == 0.0:
                    val += w * math.log(b / a)
                else:
                    val += w * (b**expo - a**expo) / expo
        out[ic] = val


_sweep_nb = _accel.kernel(_sweep_py)


def _sweep_np(D, centers, deltas, gstart, gdist, R, h, expo, theta, sigma, out):
    ng = gdist.size
    M = np.zeros(centers.size)
    val = np.zeros(centers.size)
    for g in range(ng):
        for k in range(gstart[g], gstart[g + 1]):
            M += D[centers + deltas[k]]
        if g == 0:
            rmin = min(h, R)
            val += np.where(M > 0, (M / rmin ** (-expo / theta)) ** theta / (sigma * theta), 0.0)
        a = max(gdist[g], h)
        b = min(gdist[g + 1] if g + 1 < ng else R, R)
        if b > a:
            w = np.maximum(M, 0.0) ** theta
            val += w * (math.log(b / a) if expo == 0.0 else (b**expo - a**expo) / expo)
    out[:] = val


def sweep_kernel(use_numba=None):
    """The center-sweep kernel: compiled when numba is on, numpy otherwise."""
    if use_numba is None:
        use_numba = _accel.use_numba()
    return _sweep_nb if (use_numba and _sweep_nb is not None) else _sweep_np


def _sweep(dens, grid, nodes, R, kern, threads=1, use_numba=None):
    """Potential at the node indices ``nodes`` (shape ``(K, n)``)."""
    off, gstart, gdist, m = _offsets(grid, R)
    D = np.pad(dens * grid.cell_volume, m).ravel()
    pshape = tuple(s + 2 * m for s in grid.shape)
    strides = np.array([int(np.prod(pshape[a + 1:])) for a in range(grid.dim)], dtype=np.int64)
    deltas = (off @ strides).astype(np.int64)
    centers = ((np.asarray(nodes) + m) @ strides).astype(np.int64)
    out = np.zeros(centers.size)
    fn = sweep_kernel(use_numba)
    args = (deltas, gstart, gdist, float(R), float(grid.h), kern.expo, kern.theta, kern.sigma)
    threads = max(1, int(threads))
    if threads == 1 or centers.size < 2 * threads:
        fn(D, centers, *args, out)
        return out
    chunks = np.array_split(np.arange(centers.size), threads)

    def run(idx):
        part = np.zeros(idx.size)
        fn(D, centers[idx], *args, part)
        return idx, part

    with ThreadPoolExecutor(threads) as pool:
        for idx, part in pool.map(run, chunks):
            out[idx] = part
    return out


def potential_field(V, R, region=None, threads=1, use_numba=None):
    """``P^V(x, R)`` at every masked node of ``region`` (NaN elsewhere)."""
    _check_radius(R)
    grid = V.grid
    sel = V.mask & region_mask(grid, region)
    nodes = np.argwhere(sel)
    vals = _sweep(_density(V, 2), grid, nodes, R, _Kernel(2.0, 0.5, grid.dim), threads, use_numba)
    out = np.full(grid.shape, np.nan)
    out[tuple(nodes.T)] = vals
    return out


def potential_sup(V, region, R, threads=1, use_numba=None):
    """``max_x P^V(x, R)`` over grid centers of ``region``.

    ``region`` is a Ball, a boolean mask, ``None`` (all of the mask) or a
    single point, which is evaluated where it is.
    """
    _check_radius(R)
    if region is not None and not isinstance(region, Ball) and np.ndim(region) == 1:
        return p_potential(V, region, R).value
    sel = V.mask & region_mask(V.grid, region)
    if not np.any(sel):
        raise GeometryError("region contains no grid center")
    return float(np.nanmax(potential_field(V, R, sel, threads, use_numba)))


# ---------------------------------------------------------------------------
# Lorentz-side bounds


@dataclass
class LorentzBoundReport:
    sup_potential: float
    hunt_bound: float
    lorentz_norm: float
    ratio_hunt: float
    ratio_lorentz: float
    cap: float | None = None
    passed: bool = True

    def as_dict(self):
        return dict(self.__dict__)


def _ratio(a, b):
    if a == 0:
        return 0.0
    return a / b if b > 0 else math.inf


def lorentz_bound_check(V, R, n=None, region=None, cap=None, threads=1):
    """Compare ``sup P^V(., R)`` with its rearrangement-side bounds.

    The Hunt-side quantity is
    ``int_0^{2 omega_n R^n} ((|V|^2)**(rho) rho^(2/n))^(1/2) drho/rho`` and
    the second comparison is against ``||V||_{L(n,1)}``.
    """
    n = V.grid.dim if n is None else n
    if not n > 2:
        raise ValueError("the Lorentz bounds are stated for n > 2")
    sup_p = potential_sup(V, region, R, threads)
    sq = ScalarField(V.grid, _scalar_values(V) ** 2, V.mask)
    hunt = maximal_power_integral(rearrange(sq), 0.5, 1.0 / n, 2.0 * omega(n) * R**n)
    norm = lorentz_norm(rearrange(V), LorentzParams(n, 1.0))
    r1, r2 = _ratio(sup_p, hunt), _ratio(sup_p, norm)
    ok = math.isfinite(r1) and math.isfinite(r2) and (cap is None or max(r1, r2) <= cap)
    return LorentzBoundReport(sup_p, hunt, norm, r1, r2, cap, ok)
