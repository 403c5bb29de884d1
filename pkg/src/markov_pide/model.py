"""Model data types, the generator, and sampling-based assumption checks.

All coefficient callables are vectorized over a batch of states:

    t : (n,)      z : (n, d)      l : (n,)

and return

    drift        (n, d)         dispersion   (n, d, d)
    jump_z       (n, K, d)      jump_l       (n, K)
    nu_density   (n, K)         discount     (n,)
    running_cost (n,)           terminal(z, l) -> (n,)

where K is the number of nodes of the mark measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Coefficient = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
Terminal = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Invalid model construction or parameters."""


@dataclass(frozen=True)
class MarkMeasure:
    """Finite reference measure on the mark space, stored as weighted nodes.

    Attributes
    ----------
    nodes : ndarray (K, p)
        Numeric payload of each mark.
    weights : ndarray (K,)
        Mass per node; ``total_mass`` is the reference jump rate.
    """

    nodes: np.ndarray
    weights: np.ndarray
    total_mass: float = field(init=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.size == 0:
            raise ModelError("mark measure needs at least one node")
        if nodes.shape[0] != weights.size:
            raise ModelError(
                f"{nodes.shape[0]} nodes but {weights.size} weights")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ModelError("mark weights must be finite and > 0")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "total_mass", math.fsum(weights))

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total_mass


@dataclass(frozen=True)
class DeclaredBounds:
    """Sup-norms and Lipschitz constants a model claims to satisfy.

    ``inf`` means the model makes no claim (e.g. an unbounded payoff).
    """

    sup_b: float = math.inf
    sup_c: float = math.inf
    sup_f: float = math.inf
    sup_g: float = math.inf
    lip_a: float = math.inf
    lip_b: float = math.inf
    lip_f: float = math.inf
    lip_g: float = math.inf


@dataclass(frozen=True)
class ModelSpec:
    """Complete coefficient bundle for a Markov-modulated marked point process."""

    name: str
    dim_z: int
    drift: Coefficient
    dispersion: Coefficient
    jump_z: Coefficient
    jump_l: Coefficient
    nu_density: Coefficient
    mark_measure: MarkMeasure
    discount: Coefficient
    running_cost: Coefficient
    terminal: Terminal
    declared_bounds: DeclaredBounds = DeclaredBounds()
    declared_rho: Optional[np.ndarray] = None
    time_homogeneous: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dim_z) != self.dim_z or self.dim_z < 1:
            raise ModelError(f"dim_z must be a positive integer, got {self.dim_z}")
        if self.declared_rho is not None:
            rho = np.asarray(self.declared_rho, dtype=float).ravel()
            if rho.size != self.mark_measure.size:
                raise ModelError("declared_rho needs one value per mark node")
            object.__setattr__(self, "declared_rho", rho)

    @property
    def n_marks(self) -> int:
        return self.mark_measure.size

    @property
    def reference_rate(self) -> float:
        """Total mass of the reference mark measure (jump rate under P~)."""
        return self.mark_measure.total_mass

    def intensity(self, t, z, l) -> np.ndarray:
        """State-dependent jump rate nu(t, x, E) = sum_k w_k nu(t, x, u_k)."""
        return self.nu_density(t, z, l) @ self.mark_measure.weights

    def diffusion_matrix(self, t, z, l) -> np.ndarray:
        b = self.dispersion(t, z, l)
        return b @ np.swapaxes(b, -1, -2)


def as_states(model: ModelSpec, t, z, l):
    """Broadcast scalar/array inputs to the (n,), (n, d), (n,) batch layout."""
    z = np.asarray(z, dtype=float)
    if z.ndim <= 1:
        z = z.reshape(-1, model.dim_z)
    if z.shape[-1] != model.dim_z:
        raise ModelError(
            f"state has {z.shape[-1]} z-components, model has dim_z={model.dim_z}")
    n = max(z.shape[0], np.size(l), np.size(t))
    if z.shape[0] != n:
        z = np.broadcast_to(z, (n, model.dim_z))
    l = np.broadcast_to(np.asarray(l, dtype=float).ravel(), (n,))
    t = np.broadcast_to(np.asarray(t, dtype=float).ravel(), (n,))
    return t, z, l


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothFunction:
    """Test function phi(z, l) with its first and second z-derivatives.

    ``value(z, l) -> (n,)``, ``grad(z, l) -> (n, d)``, ``hess(z, l) -> (n, d, d)``.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray, np.ndarray], np.ndarray]

    @classmethod
    def constant(cls, c: float, dim_z: int = 1) -> "SmoothFunction":
        return cls(
            value=lambda z, l: np.full(len(l), float(c)),
            grad=lambda z, l: np.zeros((len(l), dim_z)),
            hess=lambda z, l: np.zeros((len(l), dim_z, dim_z)),
        )

    @classmethod
    def l_coordinate(cls, dim_z: int = 1) -> "SmoothFunction":
        return cls(
            value=lambda z, l: np.array(l, dtype=float),
            grad=lambda z, l: np.zeros((len(l), dim_z)),
            hess=lambda z, l: np.zeros((len(l), dim_z, dim_z)),
        )

    @classmethod
    def z_coordinate(cls, i: int = 0, dim_z: int = 1) -> "SmoothFunction":
        e = np.zeros(dim_z)
        e[i] = 1.0
        return cls(
            value=lambda z, l: np.array(z[:, i], dtype=float),
            grad=lambda z, l: np.broadcast_to(e, (len(l), dim_z)).copy(),
            hess=lambda z, l: np.zeros((len(l), dim_z, dim_z)),
        )

    @classmethod
    def quadratic_z(cls, i: int = 0, dim_z: int = 1) -> "SmoothFunction":
        def grad(z, l):
            out = np.zeros((len(l), dim_z))
            out[:, i] = 2.0 * z[:, i]
            return out

        def hess(z, l):
            out = np.zeros((len(l), dim_z, dim_z))
            out[:, i, i] = 2.0
            return out

        return cls(value=lambda z, l: z[:, i] ** 2, grad=grad, hess=hess)

    def scaled_sum(self, alpha: float, other: "SmoothFunction",
                   beta: float) -> "SmoothFunction":
        """alpha * self + beta * other."""
        return SmoothFunction(
            value=lambda z, l: alpha * self.value(z, l) + beta * other.value(z, l),
            grad=lambda z, l: alpha * self.grad(z, l) + beta * other.grad(z, l),
            hess=lambda z, l: alpha * self.hess(z, l) + beta * other.hess(z, l),
        )


def jump_term(model: ModelSpec, value: Callable, t, z, l) -> np.ndarray:
    """sum_k w_k nu(t,x,u_k) [phi(z + gz_k, l + gl_k) - phi(z, l)]."""
    n, d = z.shape
    K = model.n_marks
    gz = model.jump_z(t, z, l)
    gl = model.jump_l(t, z, l)
    dest_z = (z[:, None, :] + gz).reshape(n * K, d)
    dest_l = (l[:, None] + gl).reshape(n * K)
    jumped = value(dest_z, dest_l).reshape(n, K)
    diff = jumped - value(z, l)[:, None]
    return (model.nu_density(t, z, l) * diff) @ model.mark_measure.weights


def apply_generator(model: ModelSpec, phi: SmoothFunction, t, x):
    """Apply the generator of X = (Z, L) to ``phi`` at time ``t`` and state ``x``.

    ``x`` is a pair ``(z, l)``; ``z`` may be a single point of shape (d,) or a
    batch (n, d).  Returns a float for a single point, else an (n,) array.
    """
    z, l = x
    single = np.ndim(z) <= 1 and np.ndim(l) == 0
    t, z, l = as_states(model, t, z, l)
    grad = np.asarray(phi.grad(z, l), dtype=float)
    hess = np.asarray(phi.hess(z, l), dtype=float)
    d = model.dim_z
    if grad.shape != (len(l), d) or hess.shape != (len(l), d, d):
        raise ModelError(
            f"phi derivatives have shapes {grad.shape}, {hess.shape}; "
            f"expected ({len(l)}, {d}) and ({len(l)}, {d}, {d})")
    a = model.drift(t, z, l)
    sigma = model.diffusion_matrix(t, z, l)
    out = np.einsum("ni,ni->n", a, grad) + 0.5 * np.einsum("nij,nij->n", sigma, hess)
    out = out + jump_term(model, phi.value, t, z, l)
    return float(out[0]) if single else out


def apply_diffusion_operator(model: ModelSpec, phi: SmoothFunction, t, x):
    """Drift and diffusion part only (no jump integral), for fixed l."""
    z, l = x
    single = np.ndim(z) <= 1 and np.ndim(l) == 0
    t, z, l = as_states(model, t, z, l)
    a = model.drift(t, z, l)
    sigma = model.diffusion_matrix(t, z, l)
    out = (np.einsum("ni,ni->n", a, phi.grad(z, l))
           + 0.5 * np.einsum("nij,nij->n", sigma, phi.hess(z, l)))
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

ASSUMPTION_IDS = ("A0", "A1", "A2", "A3", "A4", "A5", "ellipticity")


@dataclass(frozen=True)
class SamplingBox:
    """Bounded box in (t, z, l) from which validation points are drawn."""

    t_range: tuple
    z_lo: tuple
    z_hi: tuple
    l_range: tuple

    def sample(self, rng: np.random.Generator, n: int):
        t = rng.uniform(self.t_range[0], self.t_range[1], n)
        lo = np.asarray(self.z_lo, dtype=float)
        hi = np.asarray(self.z_hi, dtype=float)
        z = lo + (hi - lo) * rng.random((n, lo.size))
        l = rng.uniform(self.l_range[0], self.l_range[1], n)
        return t, z, l


@dataclass(frozen=True)
class AssumptionCheck:
    assumption: str
    status: str  # pass | warn | fail
    worst_value: float
    location: tuple  # (t, z..., l, mark) of the worst case, mark -1 if n/a
    message: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    sampled_lipschitz: dict
    ellipticity_estimate: float

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def check(self, assumption: str) -> AssumptionCheck:
        for c in self.checks:
            if c.assumption == assumption:
                return c
        raise KeyError(assumption)


def _location(t, z, l, i, k=-1):
    return (float(t[i]),) + tuple(float(v) for v in z[i]) + (float(l[i]), int(k))


def _lipschitz(values_x, values_y, dist):
    """Max difference quotient and its argmax over sampled pairs."""
    dv = np.abs(values_x - values_y).reshape(len(dist), -1).max(axis=1)
    q = dv / dist
    i = int(np.argmax(q))
    return float(q[i]), i


def validate_assumptions(model: ModelSpec, sampler: SamplingBox,
                         n_samples: int = 2000, seed: int = 0) -> ValidationReport:
    """Evaluate the coefficients on sampled points and pairs; report per assumption.

    Lipschitz constants are max difference quotients in x = (z, l) over pairs
    sharing the same t.  This is a report on a bounded box, not a proof.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rng = np.random.default_rng(seed)
    t, z, l = sampler.sample(rng, n_samples)
    # partner points at log-uniform distances, clipped to the box
    d = model.dim_z
    scale = np.concatenate([np.asarray(sampler.z_hi, float) - np.asarray(sampler.z_lo, float),
                            [sampler.l_range[1] - sampler.l_range[0]]])
    direction = rng.standard_normal((n_samples, d + 1))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = np.exp(rng.uniform(np.log(1e-3), np.log(0.5), n_samples))[:, None]
    step = direction * radius * np.maximum(scale, 1e-12)
    z2 = np.clip(z + step[:, :d], sampler.z_lo, sampler.z_hi)
    l2 = np.clip(l + step[:, d], sampler.l_range[0], sampler.l_range[1])
    dist = np.sqrt(np.sum((z2 - z) ** 2, axis=1) + (l2 - l) ** 2)
    keep = dist > 1e-12
    bounds = model.declared_bounds
    checks = []

    ev = {}
    ev2 = {}
    names = ("drift", "dispersion", "jump_z", "jump_l", "nu_density",
             "discount", "running_cost")
    for name in names:
        fn = getattr(model, name)
        ev[name] = np.asarray(fn(t, z, l), dtype=float)
        ev2[name] = np.asarray(fn(t, z2, l2), dtype=float)
    ev["terminal"] = np.asarray(model.terminal(z, l), dtype=float)
    ev2["terminal"] = np.asarray(model.terminal(z2, l2), dtype=float)

    # A0: finite values everywhere (continuity is probed via the pair quotients)
    bad = None
    for name, arr in ev.items():
        flat = arr.reshape(n_samples, -1)
        rows = np.where(~np.all(np.isfinite(flat), axis=1))[0]
        if rows.size:
            bad = (name, int(rows[0]))
            break
    if bad is None:
        checks.append(AssumptionCheck("A0", "pass", 0.0, _location(t, z, l, 0),
                                      "all coefficients finite on samples"))
    else:
        name, i = bad
        checks.append(AssumptionCheck("A0", "fail", math.nan, _location(t, z, l, i),
                                      f"non-finite {name}"))
        return ValidationReport(tuple(checks), {}, math.nan)

    lips = {}
    where = {}
    pairs = {
        "a": "drift", "b": "dispersion", "gamma_z": "jump_z", "gamma_l": "jump_l",
        "nu": "nu_density", "c": "discount", "f": "running_cost", "g": "terminal",
    }
    idx = np.where(keep)[0]
    for key, name in pairs.items():
        q, i = _lipschitz(ev[name][idx], ev2[name][idx], dist[idx])
        lips[key] = q
        where[key] = int(idx[i])

    def bounded_by(key, declared, label):
        est = lips[key]
        status = "pass" if est <= declared * (1 + 1e-6) + 1e-12 else (
            "warn" if math.isinf(declared) else "fail")
        msg = f"{label} Lipschitz estimate {est:.4g} (declared {declared:.4g})"
        return status, est, msg

    # A1: a and b Lipschitz in x
    sa, ea, ma = bounded_by("a", bounds.lip_a, "a")
    sb, eb, mb = bounded_by("b", bounds.lip_b, "b")
    status = "fail" if "fail" in (sa, sb) else ("warn" if "warn" in (sa, sb) else "pass")
    worst = "a" if ea >= eb else "b"
    checks.append(AssumptionCheck("A1", status, max(ea, eb),
                                  _location(t, z, l, where[worst]), f"{ma}; {mb}"))

    # A2: 0 <= nu <= 1 with a finite reference measure
    nu = ev["nu_density"]
    i, k = np.unravel_index(int(np.argmax(nu)), nu.shape)
    numax = float(nu[i, k])
    numin = float(nu.min())
    lam = model.reference_rate
    if numax > 1.0 + 1e-12 or numin < -1e-12 or not (0 < lam < math.inf):
        status = "fail"
    else:
        status = "pass"
    checks.append(AssumptionCheck(
        "A2", status, numax, _location(t, z, l, i, k),
        f"max nu {numax:.6g}, min nu {numin:.6g}, reference mass {lam:.6g}"))

    # A3: gamma and nu Lipschitz / bounded by rho(u)
    size = np.abs(ev["jump_z"]).sum(axis=-1) + np.abs(ev["jump_l"])  # (n, K)
    if model.declared_rho is None:
        status = "warn"
        worst_v = max(lips["gamma_z"], lips["gamma_l"], lips["nu"])
        loc = _location(t, z, l, where["gamma_z"])
        msg = "no rho declared; reporting raw Lipschitz estimates"
    else:
        rho = model.declared_rho
        ratio_size = size / rho
        jz = np.abs(ev["jump_z"][idx] - ev2["jump_z"][idx]).sum(axis=-1)
        jl = np.abs(ev["jump_l"][idx] - ev2["jump_l"][idx])
        jn = np.abs(ev["nu_density"][idx] - ev2["nu_density"][idx])
        ratio_lip = (jz + jl + jn) / dist[idx][:, None] / rho
        worst_v = float(max(ratio_size.max(), ratio_lip.max()))
        i, k = np.unravel_index(int(np.argmax(ratio_size)), ratio_size.shape)
        loc = _location(t, z, l, i, k)
        status = "pass" if worst_v <= 1.0 + 1e-9 else "fail"
        msg = "max of |gamma|/rho and Lipschitz quotient/rho"
    checks.append(AssumptionCheck("A3", status, worst_v, loc, msg))

    # A4: c bounded
    c = ev["discount"]
    i = int(np.argmax(np.abs(c)))
    cmax = float(abs(c[i]))
    status = "pass" if cmax <= bounds.sup_c + 1e-12 else (
        "warn" if math.isinf(bounds.sup_c) else "fail")
    checks.append(AssumptionCheck("A4", status, cmax, _location(t, z, l, i),
                                  f"sup |c| {cmax:.6g}, Lipschitz {lips['c']:.4g}"))

    # A5: f, g bounded and Lipschitz
    f = ev["running_cost"]
    g = ev["terminal"]
    fmax, gmax = float(np.abs(f).max()), float(np.abs(g).max())
    st = []
    for val, decl in ((fmax, bounds.sup_f), (gmax, bounds.sup_g),
                      (lips["f"], bounds.lip_f), (lips["g"], bounds.lip_g)):
        st.append("pass" if val <= decl * (1 + 1e-6) + 1e-12
                  else ("warn" if math.isinf(decl) else "fail"))
    status = "fail" if "fail" in st else ("warn" if "warn" in st else "pass")
    i = int(np.argmax(np.abs(g)))
    if any(math.isinf(x) for x in (bounds.sup_f, bounds.sup_g)) and status == "pass":
        status = "warn"
    checks.append(AssumptionCheck(
        "A5", status, max(fmax, gmax), _location(t, z, l, i),
        f"sup|f| {fmax:.6g}, sup|g| {gmax:.6g} on the box; "
        f"Lipschitz f {lips['f']:.4g}, g {lips['g']:.4g}"))

    # ellipticity of Sigma = b b^T (reported, never a hard failure)
    b = ev["dispersion"]
    eig = np.linalg.eigvalsh(b @ np.swapaxes(b, -1, -2))
    i = int(np.argmin(eig[:, 0]))
    emin = float(eig[i, 0])
    status = "pass" if emin > 1e-12 else "warn"
    if emin < -1e-10:
        status = "fail"
    checks.append(AssumptionCheck("ellipticity", status, emin, _location(t, z, l, i),
                                  f"smallest eigenvalue of b b^T: {emin:.6g}"))
    return ValidationReport(tuple(checks), lips, emin)
