"""Regularized Dirichlet solves and the outer fixed-point loop.

The discrete energy is built on the Kuhn triangulation of the grid: every
cell is split into ``n!`` simplices, one per ordering of the axes, and ``u``
is continuous and piecewise linear.  On the simplex of ordering ``sigma`` with
vertices ``o_0 = corner``, ``o_k = o_{k-1} + e_{sigma_k}`` the gradient is
``Z_{sigma_k} = (u(o_k) - u(o_{k-1})) / h``.  The energy

    E(u) = sum_simplices A_eps(Z) h^n / n!  -  sum_nodes f u h^n

is minimized over the unknown nodes by damped Newton with an Armijo line
search; the Newton systems are solved by Jacobi-preconditioned CG.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import _accel
from .fields import ScalarField, gradient, lp_norm
from .models import OperatorModel, RegularizedModel, UnsupportedVariantError, regularize

B_LAWS = ("power", "const", "power-signed", "zero")
_GL_T, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_T, _GL_W = 0.5 * (_GL_T + 1.0), 0.5 * _GL_W


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# truncations


def truncate_V(V, eps):
    """Clamp every component of ``V`` to ``[-1/eps, 1/eps]``."""
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    return V.with_values(np.clip(V.values, -1.0 / eps, 1.0 / eps))


def truncate_b(b, eps):
    """``b / (1 + eps |b|)``."""
    if not eps >= 0:
        raise ValueError(f"epsilon must be nonnegative, got {eps}")
    b = np.asarray(b, float)
    out = b / (1.0 + eps * np.abs(b))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# simplex kernels


def _grad_py(U, cells, offs, perms, h, Z):
    S = offs.shape[0]
    n = perms.shape[1]
    N = U.shape[0]
    for s in range(S):
        for k in range(1, n + 1):
            ax = perms[s, k - 1]
            o1 = offs[s, k]
            o0 = offs[s, k - 1]
            for c in range(cells.size):
                base = cells[c]
                for a in range(N):
                    Z[s, c, a, ax] = (U[a, base + o1] - U[a, base + o0]) / h


def _scatter_py(F, cells, offs, perms, scale, R):
    S = offs.shape[0]
    n = perms.shape[1]
    N = R.shape[0]
    R[:, :] = 0.0
    for s in range(S):
        for k in range(1, n + 1):
            ax = perms[s, k - 1]
            o1 = offs[s, k]
            o0 = offs[s, k - 1]
            for c in range(cells.size):
                base = cells[c]
                for a in range(N):
                    R[a, base + o1] += scale * F[s, c, a, ax]
            for c in range(cells.size):
                base = cells[c]
                for a in range(N):
                    R[a, base + o0] -= scale * F[s, c, a, ax]


def _jacobi_py(B, cells, offs, perms, scale, D):
    # B: (S, C, N, n, n) diagonal blocks of the flux Jacobian
    S = offs.shape[0]
    n = perms.shape[1]
    N = D.shape[0]
    D[:, :] = 0.0
    for s in range(S):
        for m in range(n + 1):
            om = offs[s, m]
            for c in range(cells.size):
                base = cells[c]
                for a in range(N):
                    v = 0.0
                    if m >= 1:
                        i = perms[s, m - 1]
                        v += B[s, c, a, i, i]
                    if m <= n - 1:
                        j = perms[s, m]
                        v += B[s, c, a, j, j]
                        if m >= 1:
                            v -= 2.0 * B[s, c, a, perms[s, m - 1], j]
                    D[a, base + om] += scale * v


_grad_nb = _accel.kernel(_grad_py)
_scatter_nb = _accel.kernel(_scatter_py)
_jacobi_nb = _accel.kernel(_jacobi_py)


def _grad_np(U, cells, offs, perms, h, Z):
    n = perms.shape[1]
    for s in range(offs.shape[0]):
        for k in range(1, n + 1):
            Z[s, :, :, perms[s, k - 1]] = ((U[:, cells + offs[s, k]] - U[:, cells + offs[s, k - 1]]) / h).T


def _scatter_np(F, cells, offs, perms, scale, R):
    n = perms.shape[1]
    R[:, :] = 0.0
    for s in range(offs.shape[0]):
        for k in range(1, n + 1):
            v = (scale * F[s, :, :, perms[s, k - 1]]).T
            R[:, cells + offs[s, k]] += v
            R[:, cells + offs[s, k - 1]] -= v


def _jacobi_np(B, cells, offs, perms, scale, D):
    n = perms.shape[1]
    D[:, :] = 0.0
    for s in range(offs.shape[0]):
        for m in range(n + 1):
            v = np.zeros(B.shape[1:3])
            if m >= 1:
                i = perms[s, m - 1]
                v = v + B[s, :, :, i, i]
            if m <= n - 1:
                j = perms[s, m]
                v = v + B[s, :, :, j, j]
                if m >= 1:
                    v = v - 2.0 * B[s, :, :, perms[s, m - 1], j]
            D[:, cells + offs[s, m]] += (scale * v).T


def simplex_kernels(use_numba=None):
    """``(gradient, scatter, jacobi)`` kernels for the chosen backend."""
    if use_numba is None:
        use_numba = _accel.use_numba()
    if use_numba and _grad_nb is not None:
        return _grad_nb, _scatter_nb, _jacobi_nb
    return _grad_np, _scatter_np, _jacobi_np


class KuhnMesh:
    """Simplicial structure of the full cells of a masked grid.

    Nodes touched by a full cell are *active*; active nodes whose ``2^n``
    surrounding cells are all full are unknowns, the remaining active nodes
    carry Dirichlet values.
    """

    def __init__(self, grid, mask=None, use_numba=None):
        self.grid = grid
        n = grid.dim
        shape = grid.shape
        mask = grid.full_mask() if mask is None else np.asarray(mask, bool)
        self.mask = mask
        self.strides = np.array([int(np.prod(shape[a + 1:])) for a in range(n)], dtype=np.int64)
        corner = np.ones(tuple(s - 1 for s in shape), bool)
        for bits in itertools.product((0, 1), repeat=n):
            corner &= mask[tuple(slice(b, b + s - 1) for b, s in zip(bits, shape))]
        self.cell_mask = corner
        cells = np.argwhere(corner)
        self.cells = (cells @ self.strides).astype(np.int64)
        self.perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        offs = np.zeros((len(self.perms), n + 1), dtype=np.int64)
        for s, perm in enumerate(self.perms):
            for k in range(1, n + 1):
                offs[s, k] = offs[s, k - 1] + self.strides[perm[k - 1]]
        self.offs = offs
        self.h = grid.h
        self.vol = grid.h**n / math.factorial(n)
        active = np.zeros(shape, bool)
        interior = np.ones(shape, bool)
        padded = np.pad(corner, 1)
        for bits in itertools.product((0, 1), repeat=n):
            sl = tuple(slice(b, b + s) for b, s in zip(bits, shape))
            active |= padded[sl]
            interior &= padded[sl]
        self.active = active
        self.unknown = interior & active
        self.dirichlet = active & ~interior
        self.unk_idx = np.flatnonzero(self.unknown.ravel())
        self._grad, self._scatter, self._jacobi = simplex_kernels(use_numba)

    @property
    def size(self):
        return self.grid.size

    def gradients(self, U):
        """Simplex gradients, shape ``(n!, cells, N, n)``."""
        Z = np.zeros((len(self.perms), self.cells.size, U.shape[0], self.grid.dim))
        self._grad(U, self.cells, self.offs, self.perms, self.h, Z)
        return Z

    def scatter(self, F):
        """Nodal ``sum_simplices vol <F, dZ/du_i>`` (the transpose of ``gradients``)."""
        R = np.zeros((F.shape[2], self.size))
        self._scatter(np.ascontiguousarray(F), self.cells, self.offs, self.perms, self.vol / self.h, R)
        return R

    def jacobi(self, blocks):
        D = np.zeros((blocks.shape[2], self.size))
        self._jacobi(np.ascontiguousarray(blocks), self.cells, self.offs, self.perms, self.vol / self.h**2, D)
        return D


# ---------------------------------------------------------------------------
# problems and reports


@dataclass(frozen=True)
class BSpec:
    """Right-hand side factor ``b(x, u, Du)`` with ``|b| <= (Gamma + |Du|)^q``."""

    law: str = "power"
    q: float = 0.0
    Gamma: float = 0.0

    def __post_init__(self):
        if self.law not in B_LAWS:
            raise ValueError(f"unknown b law {self.law!r}; expected one of {B_LAWS}")
        if not (self.q >= 0 and self.Gamma >= 0):
            raise ValueError("need q >= 0 and Gamma >= 0")

    def evaluate(self, coords, u, grad_mag):
        if self.law == "zero":
            return np.zeros_like(grad_mag)
        if self.law == "const":
            return np.ones_like(grad_mag)
        val = (self.Gamma + grad_mag) ** self.q
        if self.law == "power-signed":
            val = val * np.sign(coords[0])
        return val


@dataclass
class SolverOptions:
    tol: float = 1e-8
    cg_rtol: float = 1e-10
    max_newton: int = 200
    max_picard: int = 50
    picard_tol: float = 1e-8
    divergence_cap: float = 1e6
    growth_window: int = 5
    eps_start: float | None = None
    critical_c0: float | None = None
    critical_eps0: float | None = None
    critical_radius: float | None = None
    use_numba: bool | None = None


@dataclass
class DirichletProblem:
    """Boundary values (and the domain mask) come from ``boundary``."""

    model: RegularizedModel
    boundary: ScalarField
    V: ScalarField | None = None
    b_spec: BSpec | None = None
    f: np.ndarray | None = None
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not isinstance(self.model, (RegularizedModel, OperatorModel)):
            raise UnsupportedVariantError("only catalog (variational) models can be solved")
        if self.b_spec is not None and self.b_spec.q > self.model.p - 1 + 1e-12:
            raise ValueError(f"need q <= p-1, got q={self.b_spec.q} with p={self.model.p}")

    @property
    def N(self):
        return self.boundary.ncomp

    @property
    def grid(self):
        return self.boundary.grid

    @property
    def epsilon(self):
        return self.model.epsilon if isinstance(self.model, RegularizedModel) else 0.0


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = math.inf
    energy_trace: list = field(default_factory=list)
    energy_increments: list = field(default_factory=list)
    converged: bool = False
    truncation_level: float = math.inf
    epsilon: float = 0.0
    message: str = ""
    cg_iterations: int = 0
    fallback_steps: int = 0
    max_energy_increase: float = -math.inf
    outer_iterations: int = 0
    outer_distances: list = field(default_factory=list)
    contraction_factor: float | None = None
    diverged: bool = False
    label: str = ""
    stages: list = field(default_factory=list)

    def as_dict(self):
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# the Newton solve


class _Energy:
    def __init__(self, mesh, flux, f):
        self.mesh = mesh
        self.flux = flux
        self.f = f
        self.cellw = mesh.h**mesh.grid.dim

    def value(self, U):
        Z = self.mesh.gradients(U)
        dens = self.flux.energy_density(Z)
        load = np.sum(self.f[:, self.mesh.unk_idx] * U[:, self.mesh.unk_idx]) * self.cellw
        return float(np.sum(dens) * self.mesh.vol - load)

    def gradient(self, U, Z=None):
        Z = self.mesh.gradients(U) if Z is None else Z
        G = self.mesh.scatter(self.flux.flux(Z)) - self.f * self.cellw
        out = np.zeros_like(G)
        out[:, self.mesh.unk_idx] = G[:, self.mesh.unk_idx]
        return out

    def increment(self, U, dZ, D, alpha, Z):
        """``E(U + alpha D) - E(U)`` as the line integral of the gradient."""
        acc = 0.0
        for t, w in zip(_GL_T, _GL_W):
            F = self.flux.flux(Z + (t * alpha) * dZ)
            acc += w * float(np.sum(F * dZ))
        load = float(np.sum(self.f[:, self.mesh.unk_idx] * D[:, self.mesh.unk_idx]))
        return alpha * (acc * self.mesh.vol - load * self.cellw)


def _flux_of(model, N, n):
    if isinstance(model, RegularizedModel):
        return model.flux_model((N, n))
    if model.s > 0:
        return model.flux_model()
    raise ValueError("solve_dirichlet needs a regularized model (s_eps > 0); call regularize first")


def _residual_norm(mesh, G):
    cellw = mesh.h**mesh.grid.dim
    R = G[:, mesh.unk_idx] / cellw
    return float(math.sqrt(np.sum(R * R) * cellw))


def _load_norm(mesh, f):
    cellw = mesh.h**mesh.grid.dim
    return float(math.sqrt(np.sum(f[:, mesh.unk_idx] ** 2) * cellw))


def _cg(mesh, apply, diag, rhs, rtol, maxiter=None):
    """Jacobi-preconditioned CG on the unknowns; returns ``(x, info, iters)``."""
    idx = mesh.unk_idx
    N = rhs.shape[0]
    m = N * idx.size
    d = np.maximum(diag[:, idx].ravel(), 1e-300)

    def mv(x):
        X = np.zeros((N, mesh.size))
        X[:, idx] = x.reshape(N, idx.size)
        return apply(X)[:, idx].ravel()

    count = [0]

    def cb(_):
        count[0] += 1

    A = LinearOperator((m, m), matvec=mv, dtype=float)
    P = LinearOperator((m, m), matvec=lambda x: x / d, dtype=float)
    b = rhs[:, idx].ravel()
    if not np.any(b):
        return np.zeros((N, mesh.size)), 0, 0
    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter or max(1000, 10 * m), M=P, callback=cb)
    X = np.zeros((N, mesh.size))
    X[:, idx] = x.reshape(N, idx.size)
    return X, info, count[0]


def _laplace_guess(mesh, U0, f, rtol=1e-12):
    """Discrete Poisson solve ``-Delta u = f`` with the Dirichlet values of ``U0``."""
    N = U0.shape[0]
    n = mesh.grid.dim

    def apply(X):
        return mesh.scatter(mesh.gradients(X))

    eye = np.broadcast_to(np.eye(n), (len(mesh.perms), mesh.cells.size, N, n, n))
    diag = mesh.jacobi(eye)
    rhs = f * mesh.h**n - apply(U0)
    X, _, _ = _cg(mesh, apply, diag, rhs, rtol)
    return U0 + X


def _newton(mesh, flux, f, U, opts, report):
    energy = _Energy(mesh, flux, f)
    fnorm = _load_norm(mesh, f)
    target = opts.tol * (1.0 + fnorm)
    E = energy.value(U)
    report.energy_trace.append(E)
    for it in range(opts.max_newton + 1):
        Z = mesh.gradients(U)
        G = energy.gradient(U, Z)
        res = _residual_norm(mesh, G)
        report.residual = res
        if res <= target:
            report.converged = True
            report.message = "residual below tolerance"
            return U
        if it == opts.max_newton:
            break
        lin = flux.linearize(Z)

        def apply(X, lin=lin):
            return mesh.scatter(lin.apply(mesh.gradients(X)))

        diag = mesh.jacobi(lin.blocks())
        D, info, its = _cg(mesh, apply, diag, -G, opts.cg_rtol)
        report.cg_iterations += its
        slope = float(np.sum(G * D))
        directions = []
        if info >= 0 and np.all(np.isfinite(D)) and slope < 0:
            directions.append(("newton", D, slope))
        P = np.zeros_like(G)
        P[:, mesh.unk_idx] = -G[:, mesh.unk_idx] / np.maximum(diag[:, mesh.unk_idx], 1e-300)
        directions.append(("gradient", P, float(np.sum(G * P))))
        step = None
        for kind, D, slope in directions:
            step = _line_search(energy, U, Z, D, slope, E, mesh)
            if step is not None:
                if kind == "gradient":
                    report.fallback_steps += 1
                break
        report.iterations = it + 1
        if step is None:
            report.message = "line search stalled above tolerance"
            return U
        U, E_new, dE = step
        report.max_energy_increase = max(report.max_energy_increase, dE)
        report.energy_increments.append(dE)
        report.energy_trace.append(E_new)
        E = E_new
    report.message = "maximum Newton iterations reached"
    return U


def _line_search(energy, U, Z, D, slope, E, mesh, c=1e-4, max_halvings=40):
    """Armijo backtracking; returns ``(U_new, E_new, dE)`` or ``None``.

    The energy change is taken from direct evaluation when it is resolved
    well above roundoff and from the gradient line integral otherwise.
    """
    dZ = mesh.gradients(D)
    alpha = 1.0
    for _ in range(max_halvings):
        Un = U + alpha * D
        En = energy.value(Un)
        if np.isfinite(En):
            direct = En - E
            if abs(direct) > 1e-9 * (abs(E) + abs(En)):
                dE = direct
            else:
                dE = energy.increment(U, dZ, D, alpha, Z)
            if dE <= c * alpha * slope:
                return Un, En, dE
        alpha *= 0.5
    return None


def _dirichlet_arrays(problem, mesh):
    """Boundary values on Dirichlet nodes, zero elsewhere."""
    comps = problem.boundary.components()
    U0 = np.where(mesh.dirichlet[None], comps, 0.0).reshape(comps.shape[0], -1)
    return U0


def _as_field(mesh, U, like):
    vals = U.reshape((U.shape[0],) + mesh.grid.shape)
    vals = np.where(mesh.active[None], vals, 0.0)
    return ScalarField(mesh.grid, vals[0] if like.ncomp == 1 else vals, mesh.active)


def _eps_schedule(target, start):
    if start is None or start <= target:
        return [target]
    out = [start]
    while out[-1] / 2 > target:
        out.append(out[-1] / 2)
    out.append(target)
    return out


def solve_dirichlet(problem, f=None, initial=None, mesh=None):
    """Minimize the regularized energy with Dirichlet data from ``problem.boundary``.

    ``f`` (or ``problem.f``) is the nodal right-hand side, shape ``(N, *grid)``
    or ``grid`` for scalars.  Returns ``(u, SolveReport)``.
    """
    opts = problem.options
    grid = problem.grid
    mesh = mesh or KuhnMesh(grid, problem.boundary.mask, opts.use_numba)
    if mesh.unk_idx.size == 0:
        raise SolverError("domain has no interior unknowns")
    N = problem.N
    f = problem.f if f is None else f
    F = np.zeros((N, grid.size)) if f is None else np.asarray(f, float).reshape(N, -1)
    U0 = _dirichlet_arrays(problem, mesh)
    if initial is None:
        U = _laplace_guess(mesh, U0, F)
    else:
        U = U0.copy()
        init = np.asarray(initial.values if hasattr(initial, "values") else initial, float).reshape(N, -1)
        U[:, mesh.unk_idx] = init[:, mesh.unk_idx]
    report = SolveReport(epsilon=problem.epsilon)
    model = problem.model
    if isinstance(model, RegularizedModel):
        schedule = _eps_schedule(model.epsilon, opts.eps_start)
    else:
        schedule = [None]
    for eps in schedule:
        m = regularize(model.base, eps, model.method) if eps is not None else model
        stage = SolveReport(epsilon=eps or 0.0)
        U = _newton(mesh, _flux_of(m, N, grid.dim), F, U, opts, stage)
        report.stages.append({"epsilon": eps, "iterations": stage.iterations, "residual": stage.residual,
                              "converged": stage.converged})
        report.iterations += stage.iterations
        report.cg_iterations += stage.cg_iterations
        report.fallback_steps += stage.fallback_steps
        report.energy_trace += stage.energy_trace
        report.energy_increments += stage.energy_increments
        report.max_energy_increase = max(report.max_energy_increase, stage.max_energy_increase)
        report.residual, report.converged, report.message = stage.residual, stage.converged, stage.message
    report.truncation_level = 1.0 / problem.epsilon if problem.epsilon > 0 else math.inf
    return _as_field(mesh, U, problem.boundary), report


# ---------------------------------------------------------------------------
# outer loop for right-hand sides b(x, u, Du) V


def _nodal_grad_mag(u):
    Du = gradient(u)
    return Du.magnitude(), Du


def _grad_lp(u, p):
    mag, Du = _nodal_grad_mag(u)
    return lp_norm(ScalarField(u.grid, mag, u.mask), p)


def _critical_label(problem, V):
    opts = problem.options
    if opts.critical_c0 is None or opts.critical_eps0 is None:
        return "critical-unverified", None, None
    from .potentials import potential_sup

    n = problem.grid.dim
    vn = lp_norm(V, n)
    R = opts.critical_radius or 0.25 * float(np.min(problem.grid.upper() - problem.grid.lower()))
    sup_p = potential_sup(V, None, R)
    small = vn < opts.critical_c0 and sup_p <= opts.critical_eps0
    return ("critical-small" if small else "critical-unverified"), vn, sup_p


def fixed_point_solve(problem, initial=None):
    """Picard iteration ``u_{k+1} = solve(f = b_eps(x, u_k, Du_k) V_eps)``."""
    opts = problem.options
    p = problem.model.p
    eps = problem.epsilon
    grid = problem.grid
    mesh = KuhnMesh(grid, problem.boundary.mask, opts.use_numba)
    V = problem.V if problem.V is not None else problem.boundary.with_values(np.zeros_like(problem.boundary.values))
    Veps = truncate_V(V, eps) if eps > 0 else V
    Vc = Veps.components() * mesh.active[None]
    bspec = problem.b_spec or BSpec("const")
    coords = grid.coords()
    report = SolveReport(epsilon=eps, truncation_level=1.0 / eps if eps > 0 else math.inf)
    critical = abs(bspec.q - (p - 1)) < 1e-12 and bspec.law != "const"
    if critical:
        report.label, vn, sup_p = _critical_label(problem, V)
        report.stages.append({"V_Ln": vn, "sup_P": sup_p})
    else:
        report.label = "subcritical"
    u = initial
    prev = None
    grad_norms = []
    growth = 0
    for k in range(opts.max_picard):
        if u is None:
            mag = np.zeros(grid.shape)
            uval = np.zeros(grid.shape)
        else:
            mag, _ = _nodal_grad_mag(u)
            uval = u.components()[0]
        b = bspec.evaluate(coords, uval, mag)
        b = truncate_b(b, eps) if eps > 0 else b
        f = b[None] * Vc
        u_new, inner = solve_dirichlet(problem, f=f, initial=u, mesh=mesh)
        report.iterations += inner.iterations
        report.cg_iterations += inner.cg_iterations
        report.energy_trace += inner.energy_trace
        report.energy_increments += inner.energy_increments
        report.max_energy_increase = max(report.max_energy_increase, inner.max_energy_increase)
        report.residual = inner.residual
        report.outer_iterations = k + 1
        gn = _grad_lp(u_new, p)
        grad_norms.append(gn)
        if not inner.converged:
            report.message = f"inner solve failed at outer iteration {k + 1}: {inner.message}"
            report.converged = False
            return u_new, _finish_outer(report)
        if prev is not None:
            diff = prev.with_values(u_new.values - prev.values)
            d = _grad_lp(diff, p)
            report.outer_distances.append(d)
            if d <= opts.picard_tol * (1.0 + gn):
                report.converged = True
                report.message = "outer iterates converged"
                return u_new, _finish_outer(report)
        if not math.isfinite(gn) or gn > opts.divergence_cap:
            report.diverged = True
            report.message = f"gradient norm {gn:.3e} exceeded the divergence cap {opts.divergence_cap:g}"
            return u_new, _finish_outer(report)
        growth = growth + 1 if len(grad_norms) > 1 and gn > grad_norms[-2] * (1 + 1e-12) else 0
        if growth >= opts.growth_window and len(report.outer_distances) >= opts.growth_window:
            ds = report.outer_distances[-opts.growth_window:]
            if all(b > a for a, b in zip(ds, ds[1:])):
                report.diverged = True
                report.message = f"gradient norm grew over {opts.growth_window} consecutive outer iterations"
                return u_new, _finish_outer(report)
        prev = u_new
        u = u_new
    report.message = f"maximum outer iterations ({opts.max_picard}) reached"
    return u, _finish_outer(report)


def _finish_outer(report):
    d = report.outer_distances
    if len(d) >= 2:
        ratios = [b / a for a, b in zip(d, d[1:]) if a > 0]
        if ratios:
            tail = ratios[-3:]
            report.contraction_factor = float(max(tail))
    return report


# ---------------------------------------------------------------------------
# uniform bounds along an epsilon family


@dataclass
class CoercivityReport:
    epsilons: list
    grad_lp: list
    mass: list
    mass_bound: list
    variation: float
    blow_up: bool

    def as_dict(self):
        return dict(self.__dict__)


def coercivity_check(solutions, problem):
    """``||Du_eps||_{L^p}`` and the mass ``sum |Du_eps|^q |V_eps| h^n`` per epsilon.

    ``solutions`` maps each epsilon to its solved field.  The mass is compared
    with ``int (1 + Gamma + |Du|)^p + |V|^n``; a strictly increasing gradient
    norm that more than doubles across the family is flagged as blow-up.
    """
    p = problem.model.p
    n = problem.grid.dim
    bspec = problem.b_spec or BSpec("const")
    V = problem.V
    eps_list = sorted(solutions, reverse=True)
    gl, mass, bound = [], [], []
    for eps in eps_list:
        u = solutions[eps]
        mag, _ = _nodal_grad_mag(u)
        gl.append(lp_norm(ScalarField(u.grid, mag, u.mask), p))
        if V is None:
            mass.append(0.0)
            bound.append(0.0)
            continue
        Ve = truncate_V(V, eps)
        vm = np.abs(Ve.magnitude()) * u.mask
        cell = u.grid.cell_volume
        mass.append(float(np.sum(mag**bspec.q * vm) * cell))
        bound.append(float(np.sum(((1 + bspec.Gamma + mag) ** p + np.abs(V.magnitude()) ** n) * u.mask) * cell))
    variation = (max(gl) - min(gl)) / max(gl) if max(gl) > 0 else 0.0
    increasing = all(b > a for a, b in zip(gl, gl[1:]))
    blow = bool(increasing and len(gl) > 1 and gl[-1] > 2 * gl[0])
    return CoercivityReport(eps_list, gl, mass, bound, variation, blow)
