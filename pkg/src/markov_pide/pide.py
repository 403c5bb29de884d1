"""Finite-difference solver for the backward PIDE

    v_t + L_t v - c v + f = 0,     v(T, z, l) = g(z, l)

on a (t, z, l) grid with d <= 2 diffusion dimensions.

The generator splits into the local part L* (drift + diffusion in z, fixed l)
and the jump integral

    F[phi](z, l) = sum_k w_k nu_k (phi(z + gz_k, l + gl_k) - phi(z, l))
                 = (J phi)(z, l) - Lambda(z, l) phi(z, l)

where J holds the arrival part (interpolated destinations) and
Lambda = sum_k w_k nu_k is the jump rate.  Two modes are provided:

fixed_point
    Global iteration over frozen-source Cauchy problems on the full horizon:
    v^{n+1} solves v_t + L* v - (c + Lambda) v + J v^n + f = 0.  Keeping the
    rate term implicit makes the map a contraction with factor at most
    1 - exp(-lam~ T); ``split_rate=False`` freezes the whole of F instead.
imex
    One backward sweep, theta-implicit in L* - c, with F evaluated at the
    later time level.

Spatial discretization: central second differences, first-order upwind drift,
zero second normal derivative on the faces of the z-box, and multilinear
interpolation of jump destinations with clamping to the box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import ModelSpec

FIXED_POINT = "fixed_point"
IMEX = "imex"

_SNAP = 1e-9


class StabilityError(ValueError):
    """Explicit jump term would violate dt * lam~ * max nu <= 1."""

    def __init__(self, dt: float, required_dt: float, n_t_required: int):
        self.dt = dt
        self.required_dt = required_dt
        self.n_t_required = n_t_required
        super().__init__(
            f"IMEX stability bound violated: dt = {dt:.6g} exceeds "
            f"1 / (lam~ max nu) = {required_dt:.6g}; use dt <= {required_dt:.6g} "
            f"(n_t >= {n_t_required})")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid over [0, T] x z-box x l-range."""

    T: float
    n_t: int
    z_min: tuple
    z_max: tuple
    n_z: tuple
    l_min: float
    l_max: float
    n_l: int

    def __post_init__(self):
        for name in ("z_min", "z_max", "n_z"):
            object.__setattr__(self, name, tuple(np.atleast_1d(getattr(self, name)).tolist()))
        object.__setattr__(self, "n_z", tuple(int(n) for n in self.n_z))
        d = len(self.n_z)
        if not 1 <= d <= 2:
            raise GridError("the PIDE grid supports 1 or 2 z-dimensions")
        if len(self.z_min) != d or len(self.z_max) != d:
            raise GridError("z_min, z_max and n_z must have the same length")
        if any(n < 3 for n in self.n_z):
            raise GridError("need at least 3 z-nodes per dimension")
        if any(lo >= hi for lo, hi in zip(self.z_min, self.z_max)):
            raise GridError("z_min must be < z_max")
        if self.n_t < 1 or self.T <= 0:
            raise GridError("need T > 0 and n_t >= 1")
        if self.n_l < 1 or (self.n_l > 1 and self.l_max <= self.l_min):
            raise GridError("need n_l >= 1 and l_max > l_min")
        if self.n_l == 1 and self.l_max != self.l_min:
            raise GridError("a single l-node needs l_min == l_max")

    @property
    def dim_z(self) -> int:
        return len(self.n_z)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def z_axes(self) -> list:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.z_min, self.z_max, self.n_z)]

    @property
    def dz(self) -> tuple:
        return tuple((hi - lo) / (n - 1) for lo, hi, n in zip(self.z_min, self.z_max, self.n_z))

    @property
    def l_nodes(self) -> np.ndarray:
        return np.linspace(self.l_min, self.l_max, self.n_l)

    @property
    def dl(self) -> float:
        return (self.l_max - self.l_min) / (self.n_l - 1) if self.n_l > 1 else math.nan

    @property
    def space_shape(self) -> tuple:
        return self.n_z + (self.n_l,)

    @property
    def n_space(self) -> int:
        return int(np.prod(self.space_shape))

    def points(self):
        """All spatial nodes flattened in C order of ``space_shape``."""
        axes = self.z_axes + [self.l_nodes]
        mesh = np.meshgrid(*axes, indexing="ij")
        zz = np.stack([m.ravel() for m in mesh[:-1]], axis=1)
        return zz, mesh[-1].ravel()

    @classmethod
    def for_model(cls, model: ModelSpec, T: float, dt: float, z_min, z_max, dz,
                  l_lo: float, l_hi: float, dl: float, m_jumps: int) -> "GridSpec":
        """Grid whose l-range covers ``m_jumps`` jumps beyond [l_lo, l_hi]."""
        z_min, z_max = np.atleast_1d(z_min).astype(float), np.atleast_1d(z_max).astype(float)
        dz = np.broadcast_to(np.atleast_1d(dz).astype(float), z_min.shape)
        n_z = tuple(int(round((hi - lo) / h)) + 1 for lo, hi, h in zip(z_min, z_max, dz))
        # sample jump sizes over the z-box
        zs = np.stack(np.meshgrid(*[np.linspace(lo, hi, 21) for lo, hi in zip(z_min, z_max)],
                                  indexing="ij"), axis=-1).reshape(-1, z_min.size)
        n = zs.shape[0]
        gl = model.jump_l(np.zeros(n), zs, np.full(n, l_lo))
        up = max(float(gl.max()), 0.0)
        down = max(float(-gl.min()), 0.0)
        lo = l_lo - m_jumps * down
        hi = l_hi + m_jumps * up
        n_l = int(math.ceil((hi - lo) / dl - 1e-9)) + 1
        hi = lo + (n_l - 1) * dl
        n_t = int(math.ceil(T / dt - 1e-9))
        return cls(T=float(T), n_t=n_t, z_min=tuple(z_min), z_max=tuple(z_max), n_z=n_z,
                   l_min=float(lo), l_max=float(hi), n_l=n_l)

    def refine(self, ratio: int = 2, axes=("t", "z", "l")) -> "GridSpec":
        """Nested refinement: every old node stays a node."""
        g = self
        if "t" in axes:
            g = replace(g, n_t=g.n_t * ratio)
        if "z" in axes:
            g = replace(g, n_z=tuple((n - 1) * ratio + 1 for n in g.n_z))
        if "l" in axes and g.n_l > 1:
            g = replace(g, n_l=(g.n_l - 1) * ratio + 1)
        return g

    def widen_z(self, factor: float = 2.0) -> "GridSpec":
        """Same z-spacing on a box ``factor`` times as wide about its centre."""
        lo, hi, n = [], [], []
        for a, b, h, m in zip(self.z_min, self.z_max, self.dz, self.n_z):
            extra = int(round((m - 1) * (factor - 1) / 2))
            lo.append(a - extra * h)
            hi.append(b + extra * h)
            n.append(m + 2 * extra)
        return replace(self, z_min=tuple(lo), z_max=tuple(hi), n_z=tuple(n))

    def extend_l(self, extra_nodes: int) -> "GridSpec":
        return replace(self, l_max=self.l_max + extra_nodes * self.dl,
                       n_l=self.n_l + extra_nodes)

    def node_index(self, t: float, z, l: float, tol: float = 1e-9) -> tuple:
        """Grid indices of an exact node; raises GridError when off-grid."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        pos = [(t / self.dt)]
        pos += [(zi - lo) / h for zi, lo, h in zip(z, self.z_min, self.dz)]
        pos += [0.0 if self.n_l == 1 else (l - self.l_min) / self.dl]
        if self.n_l == 1 and abs(l - self.l_min) > tol:
            raise GridError(f"l = {l} is not a grid node")
        idx = []
        sizes = (self.n_t + 1,) + self.n_z + (self.n_l,)
        for p, n in zip(pos, sizes):
            k = int(round(p))
            if abs(p - k) > tol * max(1.0, abs(p)) or not 0 <= k < n:
                raise GridError(f"point ({t}, {z.tolist()}, {l}) is not a grid node")
            idx.append(k)
        return tuple(idx)

    def to_dict(self) -> dict:
        return {"T": self.T, "n_t": self.n_t, "z_min": list(self.z_min),
                "z_max": list(self.z_max), "n_z": list(self.n_z),
                "l_min": self.l_min, "l_max": self.l_max, "n_l": self.n_l}


@dataclass(frozen=True)
class ResidualStats:
    max_abs: float
    mean_abs: float
    n_points: int
    order: Optional[float] = None
    refined_max_abs: Optional[float] = None


@dataclass(frozen=True)
class PIDESolution:
    values: np.ndarray  # (n_t + 1, *n_z, n_l)
    grid: GridSpec
    mode: str
    theta: float
    iterations: int = 0
    sup_norm_deltas: tuple = ()
    converged: bool = True
    clamp_count: int = 0
    bounds: tuple = (-math.inf, math.inf)
    residual_stats: Optional[ResidualStats] = None
    split_rate: bool = True
    meta: dict = field(default_factory=dict)

    def at(self, t: float, z, l: float) -> float:
        return float(self.values[self.grid.node_index(t, z, l)])

    def within_bounds(self, slack: float = 1e-9) -> bool:
        lo, hi = self.bounds
        return bool(self.values.min() >= lo - slack and self.values.max() <= hi + slack)

    def contraction_ratios(self) -> np.ndarray:
        d = np.asarray(self.sup_norm_deltas)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _positions(grid: GridSpec):
    return [p.ravel() for p in np.indices(grid.space_shape)]


def _strides(grid: GridSpec):
    shape = grid.space_shape
    return [int(np.prod(shape[i + 1:])) for i in range(len(shape))]


def local_operator(model: ModelSpec, grid: GridSpec, t: float,
                   rate_implicit: bool) -> sp.csr_matrix:
    """Sparse matrix of L* - c (and - Lambda if ``rate_implicit``) at time t."""
    zz, ll = grid.points()
    N = ll.size
    tt = np.full(N, float(t))
    a = model.drift(tt, zz, ll)
    sigma = model.diffusion_matrix(tt, zz, ll)
    diag = -model.discount(tt, zz, ll).astype(float)
    if rate_implicit:
        diag = diag - model.intensity(tt, zz, ll)
    pos = _positions(grid)
    stride = _strides(grid)
    rows, cols, vals = [np.arange(N)], [np.arange(N)], [diag]
    node = np.arange(N)
    d = grid.dim_z
    for i in range(d):
        n, h, s, p = grid.n_z[i], grid.dz[i], stride[i], pos[i]
        ai = a[:, i]
        fwd = ((ai >= 0) & (p < n - 1)) | (p == 0)
        # upwind first difference, one-sided inward on the faces
        for mask, off, sign in ((fwd, s, 1.0), (~fwd, -s, -1.0)):
            j = node[mask]
            coef = sign * ai[mask] / h
            rows += [j, j]
            cols += [j + off, j]
            vals += [coef, -coef]
        inner = (p > 0) & (p < n - 1)
        j = node[inner]
        coef = 0.5 * sigma[inner, i, i] / h ** 2
        rows += [j, j, j]
        cols += [j - s, j, j + s]
        vals += [coef, -2.0 * coef, coef]
    if d == 2:
        inner = ((pos[0] > 0) & (pos[0] < grid.n_z[0] - 1)
                 & (pos[1] > 0) & (pos[1] < grid.n_z[1] - 1))
        j = node[inner]
        s0, s1 = stride[0], stride[1]
        coef = sigma[inner, 0, 1] / (4.0 * grid.dz[0] * grid.dz[1])
        for o0, o1, sg in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
            rows.append(j)
            cols.append(j + o0 * s0 + o1 * s1)
            vals.append(sg * coef)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    return A.tocsr()


def _axis_weights(p: np.ndarray, n: int):
    """Linear-interpolation corners along one axis; returns (lo, frac, clamped)."""
    clamped = (p < -_SNAP) | (p > n - 1 + _SNAP)
    p = np.clip(p, 0.0, n - 1)
    near = np.abs(p - np.round(p)) < _SNAP
    p = np.where(near, np.round(p), p)
    if n == 1:
        return np.zeros(p.size, dtype=np.int64), np.zeros(p.size), clamped
    lo = np.minimum(np.floor(p).astype(np.int64), n - 2)
    return lo, p - lo, clamped


@dataclass(frozen=True)
class ArrivalOperator:
    J: sp.csr_matrix
    rate: np.ndarray         # Lambda at each node
    clamp_count: int         # (node, mark) pairs whose destination left the box
    clamped_nodes: np.ndarray  # bool per node


def arrival_operator(model: ModelSpec, grid: GridSpec, t: float) -> ArrivalOperator:
    zz, ll = grid.points()
    N = ll.size
    tt = np.full(N, float(t))
    gz = model.jump_z(tt, zz, ll)
    gl = model.jump_l(tt, zz, ll)
    nu = model.nu_density(tt, zz, ll)
    w = model.mark_measure.weights
    stride = _strides(grid)
    d = grid.dim_z
    rows, cols, vals = [], [], []
    clamped_any = np.zeros(N, dtype=bool)
    clamp_count = 0
    node = np.arange(N)
    for k in range(model.n_marks):
        weight = w[k] * nu[:, k]
        active = weight != 0.0
        axes = []
        clamped = np.zeros(N, dtype=bool)
        for i in range(d):
            p = (zz[:, i] + gz[:, k, i] - grid.z_min[i]) / grid.dz[i]
            axes.append(_axis_weights(p, grid.n_z[i]))
        if grid.n_l > 1:
            p = (ll + gl[:, k] - grid.l_min) / grid.dl
        else:
            p = np.where(np.abs(gl[:, k]) > 0, np.inf, 0.0)
        axes.append(_axis_weights(p, grid.n_l))
        for lo, frac, cl in axes:
            clamped |= cl
        clamped &= active
        clamp_count += int(clamped.sum())
        clamped_any |= clamped
        for corner in range(2 ** (d + 1)):
            idx = np.zeros(N, dtype=np.int64)
            cw = weight.copy()
            for i, (lo, frac, _) in enumerate(axes):
                bit = (corner >> i) & 1
                idx += (lo + bit) * stride[i]
                cw *= frac if bit else (1.0 - frac)
            keep = cw != 0.0
            rows.append(node[keep])
            cols.append(idx[keep])
            vals.append(cw[keep])
    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    return ArrivalOperator(J, nu @ w, clamp_count, clamped_any)


def apply_integral_operator(phi: np.ndarray, model: ModelSpec, grid: GridSpec,
                            t: float) -> np.ndarray:
    """F[phi] on the grid: jumps to interpolated (clamped) destinations minus rate * phi.

    ``phi`` has shape ``grid.space_shape``; so does the result.
    """
    op = arrival_operator(model, grid, t)
    v = np.asarray(phi, dtype=float).reshape(-1)
    return (op.J @ v - op.rate * v).reshape(grid.space_shape)


# ---------------------------------------------------------------------------
# time marching
# ---------------------------------------------------------------------------

def _comparison_bounds(model: ModelSpec, grid: GridSpec, g: np.ndarray) -> tuple:
    zz, ll = grid.points()
    tt = np.zeros(ll.size)
    db = model.declared_bounds
    cbar = db.sup_c if math.isfinite(db.sup_c) else float(np.abs(model.discount(tt, zz, ll)).max())
    fbar = db.sup_f if math.isfinite(db.sup_f) else float(np.abs(model.running_cost(tt, zz, ll)).max())
    T = grid.T
    up, down = math.exp(T * cbar), math.exp(-T * cbar)
    gmax, gmin = float(g.max()), float(g.min())
    hi = max(gmax * up, gmax * down) + T * fbar * up
    lo = min(gmin * up, gmin * down) - T * fbar * up
    return lo, hi


class _Stepper:
    """Factorized theta-step matrices, rebuilt per step only if t-dependent."""

    def __init__(self, model, grid, theta, rate_implicit):
        self.model, self.grid, self.theta = model, grid, theta
        self.rate_implicit = rate_implicit
        self.homogeneous = model.time_homogeneous
        self.I = sp.identity(grid.n_space, format="csc")
        self._cache = {}
        if self.homogeneous:
            self._prepare(0.0, 0.0)

    def _op(self, t):
        return local_operator(self.model, self.grid, t, self.rate_implicit)

    def _prepare(self, t_now, t_next):
        dt, th = self.grid.dt, self.theta
        A_now = self._op(t_now)
        A_next = A_now if self.homogeneous else self._op(t_next)
        lhs = (self.I - th * dt * A_now).tocsc()
        self.lu = splu(lhs)
        self.rhs_op = (self.I + (1.0 - th) * dt * A_next).tocsr()

    def step(self, m: int, v_next: np.ndarray, extra: np.ndarray) -> np.ndarray:
        """Solve for time level m given level m + 1; ``extra`` is already times dt."""
        if not self.homogeneous:
            t = self.grid.t_nodes
            self._prepare(t[m], t[m + 1])
        return self.lu.solve(self.rhs_op @ v_next + extra)


def _terminal(model: ModelSpec, grid: GridSpec) -> np.ndarray:
    zz, ll = grid.points()
    return np.asarray(model.terminal(zz, ll), dtype=float)


def _time_field(fn, grid: GridSpec, homogeneous: bool) -> np.ndarray:
    """Evaluate a coefficient on every (t, node); shape (n_t + 1, N)."""
    zz, ll = grid.points()
    N = ll.size
    if homogeneous:
        row = np.asarray(fn(np.zeros(N), zz, ll), dtype=float)
        return np.broadcast_to(row, (grid.n_t + 1, N))
    return np.stack([np.asarray(fn(np.full(N, t), zz, ll), dtype=float)
                     for t in grid.t_nodes])


def _march(stepper: _Stepper, grid: GridSpec, terminal: np.ndarray,
           source: np.ndarray) -> np.ndarray:
    M = grid.n_t
    th, dt = stepper.theta, grid.dt
    out = np.empty((M + 1, terminal.size))
    out[M] = terminal
    for m in range(M - 1, -1, -1):
        extra = dt * (th * source[m] + (1.0 - th) * source[m + 1])
        out[m] = stepper.step(m, out[m + 1], extra)
    return out


def _check_theta(theta: float):
    if not 0.5 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0.5, 1], got {theta}")


def solve_frozen_pde(model: ModelSpec, l: float, source: np.ndarray, grid: GridSpec,
                     theta: float = 0.5) -> np.ndarray:
    """Solve psi_t + L* psi + F = c psi, psi(T) = g(., l) for one fixed level l.

    ``source`` has shape ``(n_t + 1, *n_z)`` (or broadcasts to it) and is
    applied theta-weighted between time levels.  Returns psi with the same
    shape.
    """
    _check_theta(theta)
    sub = replace(grid, l_min=float(l), l_max=float(l), n_l=1)
    shape = (sub.n_t + 1,) + sub.n_z
    src = np.broadcast_to(np.asarray(source, dtype=float), shape).reshape(sub.n_t + 1, -1)
    stepper = _Stepper(model, sub, theta, rate_implicit=False)
    try:
        out = _march(stepper, sub, _terminal(model, sub), src)
    except RuntimeError as exc:  # singular factor from splu
        raise np.linalg.LinAlgError(f"frozen PDE solve failed: {exc}") from exc
    return out.reshape(shape)


def solve_pide_fixed_point(model: ModelSpec, grid: GridSpec, tol: float = 1e-8,
                           max_iter: int = 60, theta: float = 0.5,
                           split_rate: bool = True,
                           compute_residual: bool = True) -> PIDESolution:
    """Solve the PIDE by iterating full-horizon frozen-source Cauchy problems.

    Starts from v^0 = g at every time and stops once the sup-norm change
    between iterates is <= ``tol`` (``converged=True``) or after
    ``max_iter`` iterations (best iterate returned, ``converged=False``).
    """
    _check_theta(theta)
    if not tol > 0:
        raise ValueError("tol must be > 0")
    M, N = grid.n_t, grid.n_space
    g = _terminal(model, grid)
    f = _time_field(model.running_cost, grid, model.time_homogeneous)
    if model.time_homogeneous:
        ops = [arrival_operator(model, grid, 0.0)]
    else:
        ops = [arrival_operator(model, grid, t) for t in grid.t_nodes]
    stepper = _Stepper(model, grid, theta, rate_implicit=split_rate)

    def frozen_source(v):
        if len(ops) == 1:
            op = ops[0]
            s = (op.J @ v.T).T
            if not split_rate:
                s = s - op.rate * v
        else:
            s = np.stack([op.J @ v[m] - (0.0 if split_rate else op.rate * v[m])
                          for m, op in enumerate(ops)])
        return s + f

    v = np.broadcast_to(g, (M + 1, N)).copy()
    deltas = []
    converged = False
    for _ in range(max_iter):
        v_new = _march(stepper, grid, g, frozen_source(v))
        delta = float(np.max(np.abs(v_new - v)))
        deltas.append(delta)
        v = v_new
        if not math.isfinite(delta):
            break
        if delta <= tol:
            converged = True
            break
    sol = PIDESolution(
        values=v.reshape((M + 1,) + grid.space_shape), grid=grid, mode=FIXED_POINT,
        theta=theta, iterations=len(deltas), sup_norm_deltas=tuple(deltas),
        converged=converged, clamp_count=max(op.clamp_count for op in ops),
        bounds=_comparison_bounds(model, grid, g), split_rate=split_rate)
    return _with_residual(sol, model) if compute_residual else sol


def imex_max_dt(model: ModelSpec, grid: GridSpec) -> float:
    """Largest dt with dt * lam~ * max nu <= 1 on the grid nodes."""
    zz, ll = grid.points()
    times = [0.0] if model.time_homogeneous else grid.t_nodes
    numax = max(float(model.nu_density(np.full(ll.size, t), zz, ll).max()) for t in times)
    if numax <= 0:
        return math.inf
    return 1.0 / (model.reference_rate * numax)


def solve_pide_imex(model: ModelSpec, grid: GridSpec, theta: float = 0.5,
                    compute_residual: bool = True) -> PIDESolution:
    """Single backward sweep with the jump integral taken explicitly.

    Raises
    ------
    StabilityError
        If ``dt * lam~ * max nu > 1``; the message carries the admissible dt.
    """
    _check_theta(theta)
    max_dt = imex_max_dt(model, grid)
    if grid.dt > max_dt * (1 + 1e-12):
        raise StabilityError(grid.dt, max_dt, int(math.ceil(grid.T / max_dt - 1e-9)))
    M, N = grid.n_t, grid.n_space
    g = _terminal(model, grid)
    f = _time_field(model.running_cost, grid, model.time_homogeneous)
    stepper = _Stepper(model, grid, theta, rate_implicit=False)
    t_nodes = grid.t_nodes
    op = arrival_operator(model, grid, 0.0)
    clamps = op.clamp_count
    v = np.empty((M + 1, N))
    v[M] = g
    dt = grid.dt
    for m in range(M - 1, -1, -1):
        if not model.time_homogeneous:
            op = arrival_operator(model, grid, t_nodes[m + 1])
            clamps = max(clamps, op.clamp_count)
        jump = op.J @ v[m + 1] - op.rate * v[m + 1]
        extra = dt * (jump + theta * f[m] + (1.0 - theta) * f[m + 1])
        v[m] = stepper.step(m, v[m + 1], extra)
    sol = PIDESolution(
        values=v.reshape((M + 1,) + grid.space_shape), grid=grid, mode=IMEX,
        theta=theta, iterations=1, sup_norm_deltas=(), converged=True,
        clamp_count=clamps, bounds=_comparison_bounds(model, grid, g), split_rate=False)
    return _with_residual(sol, model) if compute_residual else sol


def solve_pide(model: ModelSpec, grid: GridSpec, mode: str = FIXED_POINT,
               theta: float = 0.5, tol: float = 1e-8, max_iter: int = 60,
               **kwargs) -> PIDESolution:
    if mode == FIXED_POINT:
        return solve_pide_fixed_point(model, grid, tol=tol, max_iter=max_iter,
                                      theta=theta, **kwargs)
    if mode == IMEX:
        return solve_pide_imex(model, grid, theta=theta, **kwargs)
    raise ValueError(f"unknown solver mode {mode!r}")


# ---------------------------------------------------------------------------
# residual
# ---------------------------------------------------------------------------

def _d1_4(v, axis, h):
    """Fourth-order central first derivative; NaN where the stencil leaves the grid."""
    out = np.full(v.shape, np.nan)
    n = v.shape[axis]
    sl = lambda a, b: tuple(slice(a, b) if i == axis else slice(None) for i in range(v.ndim))
    out[sl(2, n - 2)] = (-v[sl(4, n)] + 8 * v[sl(3, n - 1)]
                         - 8 * v[sl(1, n - 3)] + v[sl(0, n - 4)]) / (12 * h)
    return out


def _d2_4(v, axis, h):
    out = np.full(v.shape, np.nan)
    n = v.shape[axis]
    sl = lambda a, b: tuple(slice(a, b) if i == axis else slice(None) for i in range(v.ndim))
    out[sl(2, n - 2)] = (-v[sl(4, n)] + 16 * v[sl(3, n - 1)] - 30 * v[sl(2, n - 2)]
                         + 16 * v[sl(1, n - 3)] - v[sl(0, n - 4)]) / (12 * h * h)
    return out


def _d11_2(v, ax0, ax1, h0, h1):
    out = np.full(v.shape, np.nan)
    n0, n1 = v.shape[ax0], v.shape[ax1]

    def sl(a0, b0, a1, b1):
        s = [slice(None)] * v.ndim
        s[ax0], s[ax1] = slice(a0, b0), slice(a1, b1)
        return tuple(s)

    out[sl(1, n0 - 1, 1, n1 - 1)] = (v[sl(2, n0, 2, n1)] - v[sl(2, n0, 0, n1 - 2)]
                                     - v[sl(0, n0 - 2, 2, n1)] + v[sl(0, n0 - 2, 0, n1 - 2)]
                                     ) / (4 * h0 * h1)
    return out


def residual_field(sol: PIDESolution, model: ModelSpec, margin: float = 0.1):
    """Pointwise residual v_t + L v - c v + f on interior time levels.

    Central differences in t, fourth-order central z-derivatives, and the
    grid jump operator.  Returns ``(R, mask)`` where R has shape
    ``(n_t - 1, *space_shape)`` and ``mask`` marks the interior nodes used for
    statistics: at least two nodes and a ``margin`` fraction of the box away
    from every z-face, and no jump destination outside the l/z box.
    """
    grid = sol.grid
    M = grid.n_t
    if M < 2 or any(n < 5 for n in grid.n_z):
        raise GridError("residual needs n_t >= 2 and at least 5 z-nodes per dimension")
    V = sol.values.reshape(M + 1, -1)
    zz, ll = grid.points()
    N = ll.size
    d = grid.dim_z
    shape = grid.space_shape
    Vs = sol.values[1:M]  # (M-1, *shape)
    Rt = (sol.values[2:] - sol.values[:-2]) / (2 * grid.dt)
    R = Rt.reshape(M - 1, N).copy()
    times = grid.t_nodes[1:M]
    homogeneous = model.time_homogeneous
    derivs1 = [_d1_4(Vs, 1 + i, grid.dz[i]).reshape(M - 1, N) for i in range(d)]
    derivs2 = [_d2_4(Vs, 1 + i, grid.dz[i]).reshape(M - 1, N) for i in range(d)]
    cross = _d11_2(Vs, 1, 2, grid.dz[0], grid.dz[1]).reshape(M - 1, N) if d == 2 else None
    clamped = np.zeros(N, dtype=bool)
    op = None
    for m_i, t in enumerate(times):
        if m_i == 0 or not homogeneous:
            tt = np.full(N, t)
            a = model.drift(tt, zz, ll)
            sig = model.diffusion_matrix(tt, zz, ll)
            c = model.discount(tt, zz, ll)
            f = model.running_cost(tt, zz, ll)
            op = arrival_operator(model, grid, t)
            clamped |= op.clamped_nodes
        v = V[m_i + 1]
        r = R[m_i]
        for i in range(d):
            r += a[:, i] * derivs1[i][m_i] + 0.5 * sig[:, i, i] * derivs2[i][m_i]
        if cross is not None:
            r += sig[:, 0, 1] * cross[m_i]
        r += op.J @ v - op.rate * v - c * v + f
    pos = _positions(grid)
    mask = ~clamped
    for i in range(d):
        n = grid.n_z[i]
        k = max(2, int(math.ceil(margin * (n - 1))))
        mask &= (pos[i] >= k) & (pos[i] <= n - 1 - k)
    return R.reshape((M - 1,) + shape), mask.reshape(shape)


def _stats(sol: PIDESolution, model: ModelSpec, margin: float):
    R, mask = residual_field(sol, model, margin)
    vals = np.abs(R[:, mask])
    if vals.size == 0:
        raise GridError("no interior nodes left for the residual")
    return float(vals.max()), float(vals.mean()), int(vals.size)


def pide_residual(sol: PIDESolution, model: ModelSpec,
                  refined: Optional[PIDESolution] = None,
                  margin: float = 0.1) -> ResidualStats:
    """Interior residual statistics, with the observed order if ``refined`` is given.

    The order is ``log(max_coarse / max_fine) / log(r)`` where r is the largest
    step-size ratio between the two grids.
    """
    mx, mean, n = _stats(sol, model, margin)
    if refined is None:
        return ResidualStats(mx, mean, n)
    fmx, _, _ = _stats(refined, model, margin)
    g, h = sol.grid, refined.grid
    ratios = [g.dt / h.dt] + [a / b for a, b in zip(g.dz, h.dz)]
    if g.n_l > 1 and h.n_l > 1:
        ratios.append(g.dl / h.dl)
    r = max(ratios)
    order = math.log(mx / fmx) / math.log(r) if r > 1 and fmx > 0 else math.nan
    return ResidualStats(mx, mean, n, order, fmx)


def _with_residual(sol: PIDESolution, model: ModelSpec) -> PIDESolution:
    try:
        stats = pide_residual(sol, model)
    except GridError:
        return sol
    return replace(sol, residual_stats=stats)


def domain_sensitivity(model: ModelSpec, grid: GridSpec, axis: str = "z",
                       mode: str = FIXED_POINT, theta: float = 0.5,
                       tol: float = 1e-8, max_iter: int = 60) -> float:
    """Max change on the original nodes when the z-box is doubled (``axis="z"``)
    or the l-range is extended by its own length (``axis="l"``), at t = 0."""
    base = solve_pide(model, grid, mode, theta, tol, max_iter, compute_residual=False)
    if axis == "z":
        wide = grid.widen_z(2.0)
        sol = solve_pide(model, wide, mode, theta, tol, max_iter, compute_residual=False)
        offs = [int(round((a - b) / h)) for a, b, h in zip(grid.z_min, wide.z_min, grid.dz)]
        sl = tuple(slice(o, o + n) for o, n in zip(offs, grid.n_z))
        sub = sol.values[(0,) + sl + (slice(None),)]
    elif axis == "l":
        wide = grid.extend_l(grid.n_l - 1)
        sol = solve_pide(model, wide, mode, theta, tol, max_iter, compute_residual=False)
        sub = sol.values[0, ..., :grid.n_l]
    else:
        raise ValueError("axis must be 'z' or 'l'")
    # compare on the interior of the original box (the outer quarter is boundary zone)
    ref = base.values[0]
    if axis == "z":
        inner = tuple(slice((n - 1) // 4, n - (n - 1) // 4) for n in grid.n_z)
        return float(np.max(np.abs(sub[inner] - ref[inner])))
    keep = max(1, grid.n_l // 2)
    return float(np.max(np.abs(sub[..., :keep] - ref[..., :keep])))
