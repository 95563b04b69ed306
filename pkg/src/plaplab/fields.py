"""Uniform-grid fields, discrete calculus and ball-restricted integrals.

Fields are sampled at the nodes of an isotropic Cartesian grid.  Every node
stands for the cube of side ``h`` centred on it, so midpoint sums over nodes
are the integrals used everywhere else in the package.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PLFIELD1"
# relative slack on squared distances so that points exactly on a sphere are
# classified identically before and after rescaling
BALL_RTOL = 1e-12


class GeometryError(ValueError):
    """The mask cannot support the requested stencil or region."""


@dataclass(frozen=True)
class Grid:
    dim: int
    shape: tuple
    spacing: float
    origin: tuple

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        shape = tuple(int(s) for s in self.shape)
        origin = tuple(float(o) for o in self.origin)
        if len(shape) != self.dim or len(origin) != self.dim:
            raise ValueError("shape and origin must have dim entries")
        if min(shape) < 3:
            raise ValueError(f"every axis needs at least 3 points, got {shape}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def cube(cls, dim, lower, upper, points):
        """Grid with ``points`` nodes per axis spanning ``[lower, upper]^dim``."""
        h = (upper - lower) / (points - 1)
        return cls(dim, (points,) * dim, h, (lower,) * dim)

    @property
    def h(self):
        return self.spacing

    @property
    def cell_volume(self):
        return self.spacing**self.dim

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        return [o + self.spacing * np.arange(s) for o, s in zip(self.origin, self.shape)]

    def coords(self):
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def full_mask(self):
        return np.ones(self.shape, dtype=bool)

    def ball_mask(self, ball):
        return ball.contains(self.coords())

    def nearest_index(self, x):
        idx = np.rint((np.asarray(x, float) - np.asarray(self.origin)) / self.spacing).astype(int)
        return tuple(int(i) for i in idx)

    def node(self, index):
        return np.asarray(self.origin) + self.spacing * np.asarray(index, float)

    def lower(self):
        return np.asarray(self.origin, float)

    def upper(self):
        return self.lower() + self.spacing * (np.asarray(self.shape) - 1)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in np.ravel(self.center)))

    def contains(self, points):
        """Strict membership of points given as ``(dim, ...)`` coordinates."""
        c = np.asarray(self.center).reshape((-1,) + (1,) * (np.ndim(points) - 1))
        d2 = np.sum((np.asarray(points) - c) ** 2, axis=0)
        return d2 < self.radius**2 * (1.0 - BALL_RTOL)

    def scaled(self, factor):
        return Ball(self.center, self.radius * factor)

    def inside(self, grid, mask=None):
        """True when the ball lies within the box of the grid (and the mask)."""
        c = np.asarray(self.center)
        if np.any(c - self.radius < grid.lower() - 1e-12) or np.any(c + self.radius > grid.upper() + 1e-12):
            return False
        if mask is None:
            return True
        return bool(np.all(mask[grid.ball_mask(self)]))


def _components(values, grid):
    """View values as ``(ncomp, *grid.shape)``."""
    v = np.asarray(values, dtype=float)
    if v.shape == grid.shape:
        return v[None]
    if v.shape[-grid.dim:] != grid.shape:
        raise ValueError(f"values shape {v.shape} does not end with grid shape {grid.shape}")
    return v.reshape((-1,) + grid.shape)


@dataclass
class ScalarField:
    """Real values per node, optionally with a leading component axis ``N``."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mask is None:
            self.mask = self.grid.full_mask()
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.grid.shape:
            raise ValueError("mask shape must equal grid shape")
        comps = _components(self.values, self.grid)
        if not np.all(np.isfinite(comps[:, self.mask])):
            raise ValueError("field values must be finite on the mask")

    @property
    def ncomp(self):
        return 1 if self.values.shape == self.grid.shape else self.values.shape[0]

    def components(self):
        return _components(self.values, self.grid)

    def magnitude(self):
        """Pointwise Euclidean norm over components."""
        return np.sqrt(np.sum(self.components() ** 2, axis=0))

    def with_values(self, values):
        return ScalarField(self.grid, values, self.mask)


@dataclass
class VectorField:
    """``N x n`` values per node stored as ``(N, n, *shape)``."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == self.grid.dim + 1:
            self.values = self.values[None]
        if self.values.shape[2:] != self.grid.shape or self.values.shape[1] != self.grid.dim:
            raise ValueError(f"vector field shape {self.values.shape} incompatible with grid")
        if self.mask is None:
            self.mask = self.grid.full_mask()
        self.mask = np.asarray(self.mask, dtype=bool)
        if not np.all(np.isfinite(self.values[..., self.mask])):
            raise ValueError("vector field entries must be finite on the mask")

    @property
    def ncomp(self):
        return self.values.shape[0]

    def magnitude(self):
        """Pointwise Frobenius norm of the ``N x n`` matrix."""
        return np.sqrt(np.sum(self.values**2, axis=(0, 1)))


# ---------------------------------------------------------------------------
# discrete calculus


def _shift(a, s, axis):
    """``b[i] = a[i + s]`` along ``axis`` with zero fill."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    if abs(s) >= n:
        return out
    dst = [slice(None)] * a.ndim
    src = [slice(None)] * a.ndim
    if s >= 0:
        dst[axis] = slice(0, n - s)
        src[axis] = slice(s, n)
    else:
        dst[axis] = slice(-s, n)
        src[axis] = slice(0, n + s)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _stencil_masks(mask, axis):
    """Centered / forward / backward stencil selectors along one axis."""
    m = mask.astype(bool)
    p1, m1 = _shift(m, 1, axis), _shift(m, -1, axis)
    p2, m2 = _shift(m, 2, axis), _shift(m, -2, axis)
    centered = m & p1 & m1
    forward = m & ~centered & p1 & p2
    backward = m & ~centered & ~forward & m1 & m2
    if np.any(m & ~(centered | forward | backward)):
        raise GeometryError(f"mask is thinner than the 3-point stencil along axis {axis}")
    return centered, forward, backward


def _diff(u, sel, axis, h):
    c, f, b = sel
    return (
        c * (_shift(u, 1, axis) - _shift(u, -1, axis))
        + f * (-3.0 * u + 4.0 * _shift(u, 1, axis) - _shift(u, 2, axis))
        + b * (3.0 * u - 4.0 * _shift(u, -1, axis) + _shift(u, -2, axis))
    ) / (2.0 * h)


def _diff_transpose(F, sel, axis, h):
    c, f, b = sel
    cf, ff, bf = c * F, f * F, b * F
    return (
        (_shift(cf, -1, axis) - _shift(cf, 1, axis))
        + (-3.0 * ff + 4.0 * _shift(ff, -1, axis) - _shift(ff, -2, axis))
        + (3.0 * bf - 4.0 * _shift(bf, 1, axis) + _shift(bf, 2, axis))
    ) / (2.0 * h)


def gradient(u):
    """Second-order gradient of a scalar or ``N``-component field.

    Centered differences where both neighbours are in the mask, one-sided
    three-point differences at the mask boundary.  Returns a
    :class:`VectorField` of shape ``(N, n, *shape)``, zero off the mask.
    """
    grid, mask = u.grid, u.mask
    comps = u.components()
    out = np.zeros((comps.shape[0], grid.dim) + grid.shape)
    for k in range(grid.dim):
        sel = _stencil_masks(mask, k)
        for a in range(comps.shape[0]):
            out[a, k] = _diff(np.where(mask, comps[a], 0.0), sel, k, grid.spacing)
    return VectorField(grid, out, mask)


def divergence(F):
    """Negative adjoint of :func:`gradient` with respect to the nodal sum.

    ``sum(divergence(F) * phi) == -sum(F * gradient(phi))`` holds exactly
    for every ``phi``; at nodes three or more cells from the mask boundary this
    is the usual centered divergence.  Returns ``(N, *shape)`` values.
    """
    grid, mask = F.grid, F.mask
    out = np.zeros((F.ncomp,) + grid.shape)
    for k in range(grid.dim):
        sel = _stencil_masks(mask, k)
        for a in range(F.ncomp):
            out[a] -= _diff_transpose(np.where(mask, F.values[a, k], 0.0), sel, k, grid.spacing)
    values = out[0] if F.ncomp == 1 else out
    return ScalarField(grid, values, mask)


# ---------------------------------------------------------------------------
# integrals and norms


def _scalar_values(f):
    if isinstance(f, VectorField):
        return f.magnitude()
    if isinstance(f, ScalarField):
        comps = f.components()
        return comps[0] if comps.shape[0] == 1 else f.magnitude()
    raise TypeError(f"expected a field, got {type(f).__name__}")


def region_mask(grid, region):
    """Boolean node selector for ``None`` (everything), a Ball or a mask."""
    if region is None:
        return grid.full_mask()
    if isinstance(region, Ball):
        return grid.ball_mask(region)
    region = np.asarray(region, dtype=bool)
    if region.shape != grid.shape:
        raise ValueError("region mask shape must equal grid shape")
    return region


def _ball_nodes(f, ball):
    sel = f.mask & f.grid.ball_mask(ball)
    if not np.any(sel):
        raise GeometryError(f"ball {ball} contains no grid point of the mask")
    return sel


def ball_integral(f, ball):
    """Midpoint-rule integral of a scalar field over the nodes inside ``ball``."""
    vals = _scalar_values(f)
    sel = _ball_nodes(f, ball)
    return float(np.sum(vals[sel]) * f.grid.cell_volume)


def ball_average(f, ball):
    vals = _scalar_values(f)
    sel = _ball_nodes(f, ball)
    return float(np.mean(vals[sel]))


def lp_norm(f, exponent, region=None):
    """Discrete ``L^t`` norm ``(sum |f|^t h^n)^(1/t)``; ``t = inf`` gives the sup."""
    t = float(exponent)
    if math.isinf(t) and t > 0:
        return sup_norm(f, region)
    if not t > 0:
        raise ValueError(f"exponent must be positive, got {exponent}")
    vals = np.abs(_scalar_values(f))
    sel = f.mask & region_mask(f.grid, region)
    return float(np.sum(vals[sel] ** t) * f.grid.cell_volume) ** (1.0 / t)


def sup_norm(f, region=None):
    vals = np.abs(_scalar_values(f))
    sel = f.mask & region_mask(f.grid, region)
    if not np.any(sel):
        raise GeometryError("region contains no grid point of the mask")
    return float(np.max(vals[sel]))


# ---------------------------------------------------------------------------
# portable field files


def write_field(path, f):
    """Write ``f`` as a PLFIELD1 file; nodes outside the mask are stored as NaN."""
    grid = f.grid
    if isinstance(f, VectorField):
        data = f.values.reshape((-1,) + grid.shape)
    else:
        data = f.components()
    data = np.where(f.mask[None], data, np.nan).astype("<f8")
    header = MAGIC + struct.pack(
        f"<qq{grid.dim}qd{grid.dim}d", grid.dim, data.shape[0], *grid.shape, grid.spacing, *grid.origin
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes())


def read_field(path):
    """Read a PLFIELD1 file as a :class:`ScalarField` (components on axis 0)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a PLFIELD1 file")
    dim, ncomp = struct.unpack_from("<qq", raw, 8)
    if dim not in (2, 3) or ncomp < 1:
        raise ValueError(f"{path}: corrupt header (dim={dim}, N={ncomp})")
    off = 24
    shape = struct.unpack_from(f"<{dim}q", raw, off)
    off += 8 * dim
    (spacing,) = struct.unpack_from("<d", raw, off)
    off += 8
    origin = struct.unpack_from(f"<{dim}d", raw, off)
    off += 8 * dim
    grid = Grid(dim, shape, spacing, origin)
    count = ncomp * grid.size
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape((ncomp,) + grid.shape)
    if len(raw) != off + 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    mask = np.all(np.isfinite(data), axis=0)
    values = np.where(mask[None], data, 0.0)
    return ScalarField(grid, values[0] if ncomp == 1 else values, mask)


def write_csv_slice(path, f, axis, index):
    """Dump the nodes with ``i_axis == index`` as CSV rows of coordinates and values."""
    grid = f.grid
    comps = f.values.reshape((-1,) + grid.shape) if isinstance(f, VectorField) else f.components()
    sl = [slice(None)] * grid.dim
    sl[axis] = index
    coords = grid.coords()[(slice(None),) + tuple(sl)].reshape(grid.dim, -1)
    vals = comps[(slice(None),) + tuple(sl)].reshape(comps.shape[0], -1)
    inmask = f.mask[tuple(sl)].ravel()
    names = "xyz"[: grid.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, *(f"v{c}" for c in range(comps.shape[0]))])
        for j in np.flatnonzero(inmask):
            w.writerow([repr(float(c)) for c in coords[:, j]] + [repr(float(v)) for v in vals[:, j]])
