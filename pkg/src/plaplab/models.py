"""Vector fields ``a(z)``, the map ``W``, monotonicity scans and regularization.

Every catalog operator is radial: ``a(z) = g(|z|^2) z`` with the convex
energy density ``A(z) = G(|z|^2) / 2`` where ``G' = g``.  Gradients ``z`` are
arrays whose last two axes are ``(N, n)``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("pLaplace", "Uhlenbeck", "GeneralGrowth")
PROFILE_NAMES = ("power", "power-log")
E = math.e


class SingularPointWarning(RuntimeWarning):
    """``a`` was evaluated at ``z = 0`` with ``p < 2`` and ``s = 0``."""


class UnsupportedVariantError(ValueError):
    pass


# ---------------------------------------------------------------------------
# radial profiles in the variable t = |z|^2


@dataclass(frozen=True)
class PowerProfile:
    """``g(t) = (t + s^2)^((p-2)/2)``: the p-Laplacean family."""

    p: float
    s: float = 0.0

    def G(self, t):
        return (2.0 / self.p) * (t + self.s**2) ** (self.p / 2)

    def g(self, t):
        tau = t + self.s**2
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tau > 0, tau ** ((self.p - 2) / 2) if self.p != 2 else np.ones_like(tau), _zero_limit(self.p))

    def dg(self, t):
        tau = t + self.s**2
        if self.p == 2:
            return np.zeros_like(tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tau > 0, 0.5 * (self.p - 2) * tau ** ((self.p - 4) / 2), 0.0)


def _zero_limit(p):
    return 0.0 if p > 2 else (1.0 if p == 2 else np.inf)


@dataclass(frozen=True)
class PowerLogProfile:
    """``G(t) = (2/p) tau^(p/2) log(e + tau)``, ``tau = t + s^2``."""

    p: float
    s: float = 0.0

    def G(self, t):
        tau = t + self.s**2
        return (2.0 / self.p) * tau ** (self.p / 2) * np.log(E + tau)

    def g(self, t):
        tau = np.asarray(t + self.s**2, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            core = np.where(tau > 0, tau ** ((self.p - 2) / 2), _zero_limit(self.p))
        return core * np.log(E + tau) + (2.0 / self.p) * tau ** (self.p / 2) / (E + tau)

    def dg(self, t):
        tau = np.asarray(t + self.s**2, float)
        p = self.p
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(tau > 0, 0.5 * (p - 2) * tau ** ((p - 4) / 2), 0.0) if p != 2 else np.zeros_like(tau)
            b = np.where(tau > 0, tau ** ((p - 2) / 2), _zero_limit(p))
        return a * np.log(E + tau) + 2.0 * b / (E + tau) - (2.0 / p) * tau ** (p / 2) / (E + tau) ** 2


@dataclass(frozen=True)
class GrowthProfile:
    """Radial field ``a(z) = h(|z|) z / |z|`` written in the variable ``t = |z|^2``.

    ``name`` selects ``h`` from the catalog: ``power`` (``h = r^(p-1)``) or
    ``power-log`` (``h = d/dr [r^p log(e + r) / p]``).
    """

    name: str
    p: float

    def H(self, r):
        if self.name == "power":
            return r**self.p / self.p
        return r**self.p * np.log(E + r) / self.p

    def h(self, r):
        p = self.p
        if self.name == "power":
            return r ** (p - 1)
        return r ** (p - 1) * np.log(E + r) + r**p / (p * (E + r))

    def dh(self, r):
        p = self.p
        if self.name == "power":
            return (p - 1) * r ** (p - 2)
        return (
            (p - 1) * r ** (p - 2) * np.log(E + r)
            + 2.0 * r ** (p - 1) / (E + r)
            - r**p / (p * (E + r) ** 2)
        )

    def G(self, t):
        return 2.0 * self.H(np.sqrt(t))

    def g(self, t):
        r = np.sqrt(np.asarray(t, float))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, self.h(r) / r, _zero_limit(self.p))

    def dg(self, t):
        r = np.sqrt(np.asarray(t, float))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, (self.dh(r) * r - self.h(r)) / (2.0 * r**3), 0.0)


# ---------------------------------------------------------------------------
# flux evaluators used by the solver


def _sqnorm(Z):
    return np.sum(Z * Z, axis=(-2, -1))


class RadialLinearization:
    """``da = g dZ + 2 g' z (z : dZ)`` evaluated at fixed ``z``."""

    def __init__(self, Z, g, dg):
        self.Z = Z
        self.g = g
        self.two_dg = 2.0 * dg

    def apply(self, dZ):
        zz = np.sum(self.Z * dZ, axis=(-2, -1))
        return self.g[..., None, None] * dZ + (self.two_dg * zz)[..., None, None] * self.Z

    def blocks(self):
        """Per-component ``n x n`` diagonal blocks, shape ``(..., N, n, n)``."""
        n = self.Z.shape[-1]
        eye = np.eye(n)
        outer = self.Z[..., :, None] * self.Z[..., None, :]
        return self.g[..., None, None, None] * eye + self.two_dg[..., None, None, None] * outer

    def matrix(self):
        """Full ``Nn x Nn`` Jacobian, shape ``(..., Nn, Nn)``."""
        z = self.Z.reshape(self.Z.shape[:-2] + (-1,))
        m = z.shape[-1]
        return self.g[..., None, None] * np.eye(m) + self.two_dg[..., None, None] * z[..., :, None] * z[..., None, :]


class RadialFlux:
    """``a(z) = g(|z|^2 + shift) z`` for a radial profile."""

    def __init__(self, profile, shift=0.0):
        self.profile = profile
        self.shift = float(shift)

    def _t(self, Z):
        return _sqnorm(Z) + self.shift

    def flux(self, Z):
        t = self._t(Z)
        g = self.profile.g(t)
        if self.shift == 0.0 and np.any(~np.isfinite(g)):
            warnings.warn("flux evaluated at the singular point z = 0", SingularPointWarning, stacklevel=3)
            g = np.where(np.isfinite(g), g, 0.0)
        return g[..., None, None] * Z

    def energy_density(self, Z):
        # shifted primitive so that A(0) = 0 whatever the shift
        return 0.5 * (self.profile.G(self._t(Z)) - self.profile.G(self.shift + 0.0 * self._t(Z)))

    def linearize(self, Z):
        t = self._t(Z)
        return RadialLinearization(Z, self.profile.g(t), self.profile.dg(t))


class MollifiedLinearization:
    def __init__(self, mats, shape):
        self.mats = mats
        self.shape = shape

    def apply(self, dZ):
        d = dZ.reshape(dZ.shape[:-2] + (-1,))
        return np.einsum("...ij,...j->...i", self.mats, d).reshape(dZ.shape)

    def blocks(self):
        N, n = self.shape
        m = self.mats.reshape(self.mats.shape[:-2] + (N, n, N, n))
        idx = np.arange(N)
        return np.moveaxis(m[..., idx, :, idx, :], 0, -3)

    def matrix(self):
        return self.mats


class MollifiedFlux:
    """Quadrature mollification ``a_eps = a * phi_eps`` of a base flux.

    Tensor-product midpoint rule with ``points`` nodes per axis on the cube
    circumscribing ``B_eps`` in ``R^{Nn}``, weighted by the standard bump.
    """

    def __init__(self, base, eps, N, n, points=5):
        self.base = base
        self.eps = float(eps)
        self.shape = (N, n)
        ticks = -1.0 + (2.0 * np.arange(points) + 1.0) / points
        nodes = np.array(list(itertools.product(ticks, repeat=N * n)))
        r2 = np.sum(nodes**2, axis=1)
        keep = r2 < 1.0
        nodes, r2 = nodes[keep], r2[keep]
        w = np.exp(-1.0 / (1.0 - r2))
        self.nodes = nodes.reshape((-1, N, n)) * self.eps
        self.weights = w / w.sum()

    def _shifted(self, Z):
        return Z[..., None, :, :] - self.nodes

    def flux(self, Z):
        vals = self.base.flux(self._shifted(Z))
        return np.einsum("k,...kij->...ij", self.weights, vals)

    def energy_density(self, Z):
        vals = self.base.energy_density(self._shifted(Z))
        return np.einsum("k,...k->...", self.weights, vals)

    def linearize(self, Z):
        mats = self.base.linearize(self._shifted(Z)).matrix()
        mats = np.where(np.isfinite(mats), mats, 0.0)
        return MollifiedLinearization(np.einsum("k,...kij->...ij", self.weights, mats), self.shape)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class OperatorModel:
    """Structure data of ``a(.)``.

    ``profile`` names the catalog entry for ``g`` (Uhlenbeck) or ``h``
    (GeneralGrowth); it is ignored for the plain p-Laplacean.
    """

    variant: str = "pLaplace"
    p: float = 2.0
    s: float = 0.0
    nu: float = 1.0
    L: float = 1.0
    profile: str = "power"
    delta0: float | None = None
    Lambda: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UnsupportedVariantError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.s >= 0:
            raise ValueError(f"s must be nonnegative, got {self.s}")
        if not (0 < self.nu <= self.L):
            raise ValueError(f"need 0 < nu <= L, got nu={self.nu}, L={self.L}")
        if self.profile not in PROFILE_NAMES:
            raise ValueError(f"unknown profile {self.profile!r}; expected one of {PROFILE_NAMES}")
        if self.variant == "GeneralGrowth":
            d0, lam = growth_bounds(self.radial_profile())
            if self.delta0 is None:
                object.__setattr__(self, "delta0", d0)
            if self.Lambda is None:
                object.__setattr__(self, "Lambda", lam)
            if not (0 < self.delta0 <= d0 * (1 + 1e-9) and lam <= self.Lambda * (1 + 1e-9)):
                raise ValueError(
                    f"h violates delta0 <= h't/h <= Lambda: sampled range [{d0:.6g}, {lam:.6g}]"
                    f" against [{self.delta0}, {self.Lambda}]"
                )

    def radial_profile(self):
        if self.variant == "GeneralGrowth":
            return GrowthProfile(self.profile, self.p)
        if self.variant == "Uhlenbeck" and self.profile == "power-log":
            return PowerLogProfile(self.p, self.s)
        return PowerProfile(self.p, self.s)

    def flux_model(self):
        return RadialFlux(self.radial_profile())

    @property
    def singular(self):
        return self.p < 2 and self.s == 0


def growth_bounds(profile, lo=1e-6, hi=1e6, samples=2001):
    """Range of ``h'(t) t / h(t)`` on a logarithmic sample of ``[lo, hi]``."""
    r = np.logspace(math.log10(lo), math.log10(hi), samples)
    ratio = profile.dh(r) * r / profile.h(r)
    return float(ratio.min()), float(ratio.max())


@dataclass(frozen=True)
class RegularizedModel:
    base: OperatorModel
    epsilon: float
    method: str = "structure"
    s_eps: float = field(init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.method not in ("structure", "mollify"):
            raise ValueError(f"unknown regularization method {self.method!r}")
        object.__setattr__(self, "s_eps", self.base.s + self.epsilon)

    @property
    def p(self):
        return self.base.p

    def flux_model(self, shape=(1, 2)):
        if self.method == "structure":
            return RadialFlux(self.base.radial_profile(), self.epsilon**2)
        return MollifiedFlux(self.base.flux_model(), self.epsilon, *shape)


def regularize(model, eps, method="structure"):
    """Smooth non-degenerate approximation of ``model``.

    ``structure`` keeps the radial form, ``a_eps(z) = g(eps^2 + |z|^2) z``;
    ``mollify`` convolves ``a`` with a bump of radius ``eps`` by quadrature.
    """
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    return RegularizedModel(model, float(eps), method)


def _flux_of(model, shape):
    if isinstance(model, RegularizedModel):
        return model.flux_model(shape)
    return model.flux_model()


def a_eval(model, z):
    """Evaluate ``a(z)``; ``z`` has trailing shape ``(N, n)`` (or ``(n,)``)."""
    z = np.asarray(z, float)
    vec = z.ndim == 1
    Z = z[None] if vec else z
    out = _flux_of(model, Z.shape[-2:]).flux(Z)
    return out[0] if vec else out


def w_map(p, z):
    """``W(z) = |z|^((p-2)/2) z`` with ``W(0) = 0``."""
    z = np.asarray(z, float)
    Z = z[None] if z.ndim == 1 else z
    r = np.sqrt(_sqnorm(Z))
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(r > 0, r ** ((p - 2) / 2), 0.0) if p != 2 else np.ones_like(r)
    out = fac[..., None, None] * Z
    return out[0] if z.ndim == 1 else out


# ---------------------------------------------------------------------------
# sampled inequalities


@dataclass
class MonotonicityReport:
    p: float
    samples: int
    c_w_bilipschitz: float
    c_mon_w: float
    c_mon_power: float | None
    c_coercive: float

    def as_dict(self):
        return dict(self.__dict__)


def _random_gradients(rng, M, shape, lo=-2.0, hi=2.0):
    d = rng.standard_normal((M,) + shape)
    d /= np.sqrt(_sqnorm(d))[:, None, None]
    r = 10.0 ** rng.uniform(lo, hi, M)
    return r[:, None, None] * d


def check_monotonicity(model, M, seed=0, shape=(1, 2)):
    """Smallest constants making the W-map and monotonicity inequalities hold.

    Scans ``M`` seeded pairs ``(z1, z2)`` with magnitudes spread over four
    decades.  ``c_mon_power`` is ``None`` for ``p < 2``.
    """
    if M < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    p = model.p
    z1 = _random_gradients(rng, M, shape)
    z2 = _random_gradients(rng, M, shape)
    # a few coincident pairs: both sides vanish, no constraint on c
    z2[: max(1, M // 100)] = z1[: max(1, M // 100)]
    a1, a2 = a_eval(model, z1), a_eval(model, z2)
    w1, w2 = w_map(p, z1), w_map(p, z2)
    dz2 = _sqnorm(z2 - z1)
    dw2 = _sqnorm(w2 - w1)
    mono = np.sum((a2 - a1) * (z2 - z1), axis=(-2, -1))
    live = dz2 > 0

    weight = (_sqnorm(z1) + _sqnorm(z2)) ** ((p - 2) / 2)
    ratio = dw2[live] / dz2[live] / weight[live]
    c_v = float(max(ratio.max(), 1.0 / ratio.min()))
    c_m3 = float(np.max(dw2[live] / mono[live]))
    c_m2 = float(np.max(dz2[live] ** (p / 2) / mono[live])) if p >= 2 else None
    s = getattr(model, "s_eps", None) or model.s
    zz = np.concatenate([z1, z2])
    az = np.concatenate([a1, a2])
    inner = np.sum(az * zz, axis=(-2, -1))
    c_y = float(np.max(_sqnorm(zz) ** (p / 2) / (inner + s**p)))
    return MonotonicityReport(p, M, c_v, c_m3, c_m2, c_y)


def sample_structure_constants(model, M=2000, seed=0, shape=(1, 2), lo=-3.0, hi=3.0):
    """Sampled growth / ellipticity constants ``(nu_0, L_0)`` of a (regularized) model.

    ``L_0`` bounds ``|a| + |da| (|z|^2+s^2)^(1/2)`` by ``(|z|^2+s^2)^((p-1)/2)``;
    ``nu_0`` makes ``<da l, l> >= nu_0^{-1} (|z|^2+s^2)^((p-2)/2) |l|^2``.
    """
    rng = np.random.default_rng(seed)
    p = model.p
    s = getattr(model, "s_eps", None) or model.s
    Z = _random_gradients(rng, M, shape, lo, hi) * (s if s > 0 else 1.0)
    flux = _flux_of(model, shape)
    a = flux.flux(Z)
    mats = flux.linearize(Z).matrix()
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    eig = np.linalg.eigvalsh(mats)
    base = _sqnorm(Z) + s**2
    growth = (np.sqrt(_sqnorm(a)) + np.abs(eig).max(axis=-1) * np.sqrt(base)) / base ** ((p - 1) / 2)
    ellip = eig.min(axis=-1) / base ** ((p - 2) / 2)
    return float(1.0 / ellip.min()), float(growth.max())
