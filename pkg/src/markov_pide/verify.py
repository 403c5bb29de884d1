"""Cross-checks between the Monte Carlo and PIDE routes, plus regularity probes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .feynman_kac import (EstimatorResult, RUNNING_TAG, TERMINAL_TAG, physical_values,
                          summarize, weighted_values, PHYSICAL_TAG)
from .model import ModelSpec, SmoothFunction, apply_generator
from .pide import (GridError, GridSpec, PIDESolution, pide_residual, residual_field,
                   solve_pide)
from .simulate import PHYSICAL, simulate_batch

BUDGET_FACTOR = 10.0


def probe_seed(seed: int, index: int) -> int:
    """Independent 63-bit seed for probe ``index`` of a run seeded with ``seed``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def residual_error_estimate(sol: PIDESolution, model: ModelSpec) -> float:
    """Error scale ``T exp(T sup c) max|residual|`` implied by the interior residual.

    The difference between the grid solution and v solves the same linear
    equation with the residual as source, hence the Duhamel-type bound.
    """
    stats = sol.residual_stats or pide_residual(sol, model)
    zz, ll = sol.grid.points()
    cbar = float(np.abs(model.discount(np.zeros(ll.size), zz, ll)).max())
    T = sol.grid.T
    return T * math.exp(T * cbar) * stats.max_abs


def default_budget(sol: PIDESolution, model: ModelSpec) -> float:
    return BUDGET_FACTOR * residual_error_estimate(sol, model)


@dataclass(frozen=True)
class ProbeComparison:
    t: float
    z: tuple
    l: float
    pide: float
    physical: EstimatorResult
    weighted: EstimatorResult
    running: EstimatorResult
    budget: float

    def _ok(self, est: EstimatorResult) -> bool:
        return abs(self.pide - est.mean) <= 3.0 * est.std_error + self.budget

    @property
    def physical_pass(self) -> bool:
        return self._ok(self.physical)

    @property
    def weighted_pass(self) -> bool:
        return self._ok(self.weighted)

    @property
    def passed(self) -> bool:
        return self.physical_pass and self.weighted_pass

    @property
    def girsanov_inconsistent(self) -> bool:
        """Exactly one MC route agrees with the grid: a measure-change problem,
        not a discretization one."""
        return self.physical_pass != self.weighted_pass

    @property
    def abs_discrepancy(self) -> float:
        return max(abs(self.pide - self.physical.mean), abs(self.pide - self.weighted.mean))

    @property
    def normalized_discrepancy(self) -> float:
        return max(abs(self.pide - e.mean) / e.std_error if e.std_error > 0 else math.inf
                   for e in (self.physical, self.weighted))


@dataclass(frozen=True)
class ComparisonReport:
    probes: tuple
    budget: float
    n_paths: int
    seed: int
    dt_max: float
    grid: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.probes)

    @property
    def girsanov_flags(self) -> list:
        return [p.girsanov_inconsistent for p in self.probes]

    @property
    def worst_abs(self) -> float:
        return max(p.abs_discrepancy for p in self.probes)

    @property
    def worst_normalized(self) -> float:
        return max(p.normalized_discrepancy for p in self.probes)

    def rows(self) -> list:
        out = []
        for p in self.probes:
            row = {"t": p.t}
            for i, zi in enumerate(p.z, start=1):
                row[f"z_{i}"] = zi
            row.update({
                "l": p.l, "pide": p.pide,
                "mc_physical": p.physical.mean, "se_physical": p.physical.std_error,
                "mc_weighted": p.weighted.mean, "se_weighted": p.weighted.std_error,
                "mc_running": p.running.mean, "se_running": p.running.std_error,
                "budget": p.budget, "pass_physical": int(p.physical_pass),
                "pass_weighted": int(p.weighted_pass),
                "girsanov_flag": int(p.girsanov_inconsistent), "pass": int(p.passed),
            })
            out.append(row)
        return out

    def summary(self) -> str:
        lines = [f"MC vs PIDE comparison: {len(self.probes)} probes, n_paths={self.n_paths}, "
                 f"seed={self.seed}, budget={self.budget:.3e}"]
        for p in self.probes:
            flag = "PASS" if p.passed else "FAIL"
            if p.girsanov_inconsistent:
                flag += " (girsanov inconsistency)"
            z = ", ".join(f"{v:g}" for v in p.z)
            lines.append(
                f"  t={p.t:g} z=({z}) l={p.l:g}: pide={p.pide:.6f} "
                f"phys={p.physical.mean:.6f}+-{p.physical.std_error:.2e} "
                f"wtd={p.weighted.mean:.6f}+-{p.weighted.std_error:.2e}  {flag}")
        lines.append(f"worst |diff| = {self.worst_abs:.3e}, worst |diff|/SE = "
                     f"{self.worst_normalized:.2f}; overall {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _interior_index(sol: PIDESolution, model: ModelSpec, t: float, z, l: float) -> tuple:
    idx = sol.grid.node_index(t, z, l)
    if not 0 <= idx[0] < sol.grid.n_t:
        raise GridError(f"probe time {t} must be before the horizon {sol.grid.T}")
    _, mask = residual_field(sol, model)
    if not mask[idx[1:]]:
        raise GridError(f"probe ({t}, {list(np.ravel(z))}, {l}) is not an interior node")
    return idx


def compare_mc_pide(model: ModelSpec, sol: PIDESolution, probes: Sequence, n_paths: int,
                    seed: int, grid_error_budget: Optional[float] = None,
                    dt_max: float = 0.01) -> ComparisonReport:
    """Compare grid values with both MC routes at interior grid nodes.

    ``probes`` holds ``(t, z, l)`` triples.  Probe i is simulated with
    ``probe_seed(seed, i)``; the physical and reference batches share it.
    Without ``grid_error_budget`` the default is ten times the
    residual-based error estimate.
    """
    if grid_error_budget is None:
        grid_error_budget = default_budget(sol, model)
    if not grid_error_budget >= 0:
        raise ValueError("grid_error_budget must be >= 0")
    T = sol.grid.T
    results = []
    for i, (t, z, l) in enumerate(probes):
        z = tuple(float(v) for v in np.ravel(z))
        idx = _interior_index(sol, model, float(t), z, float(l))
        s = probe_seed(seed, i)
        x = (np.asarray(z), float(l))
        vals, _ = physical_values(model, float(t), x, T, n_paths, dt_max, s)
        term, run, batch = weighted_values(model, float(t), x, T, n_paths, dt_max, s)
        st = z + (float(l),)
        nf = int(batch.flagged.sum())
        results.append(ProbeComparison(
            t=float(t), z=z, l=float(l), pide=float(sol.values[idx]),
            physical=summarize(vals, s, PHYSICAL_TAG, 0, t, st),
            weighted=summarize(term, s, TERMINAL_TAG, nf, t, st),
            running=summarize(run, s, RUNNING_TAG, nf, t, st),
            budget=float(grid_error_budget)))
    return ComparisonReport(tuple(results), float(grid_error_budget), int(n_paths),
                            int(seed), float(dt_max), sol.grid.to_dict())


# ---------------------------------------------------------------------------
# regularity ladder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegularityReport:
    """Difference quotients on a nested ladder of grids (coarse to fine).

    ``d2z``, ``d2l`` and ``dt`` hold one array of values at the probe
    points per grid; ``*_cauchy`` are sup-norm differences between
    consecutive grids.
    """
    ratio: int
    lipschitz_l: tuple
    d2z: tuple
    d2z_cauchy: tuple
    d2l: tuple
    d2l_cauchy: tuple
    dt: tuple
    dt_cauchy: tuple

    @staticmethod
    def _shrink(c):
        c = np.asarray(c)
        with np.errstate(divide="ignore", invalid="ignore"):
            return c[:-1] / c[1:]

    @property
    def d2z_shrink(self) -> np.ndarray:
        return self._shrink(self.d2z_cauchy)

    @property
    def dt_shrink(self) -> np.ndarray:
        return self._shrink(self.dt_cauchy)

    @property
    def lipschitz_growth(self) -> np.ndarray:
        lip = np.asarray(self.lipschitz_l)
        return lip[1:] / lip[:-1]

    @property
    def d2l_growth(self) -> np.ndarray:
        m = np.array([np.max(np.abs(a)) for a in self.d2l])
        with np.errstate(divide="ignore", invalid="ignore"):
            return m[1:] / m[:-1]

    def z_second_differences_converge(self, factor: float = 2.0) -> bool:
        """Cauchy differences shrink by ``factor`` per refinement (or are already ~0)."""
        c = np.asarray(self.d2z_cauchy)
        if np.all(c <= 1e-10):
            return True
        return bool(np.all(self.d2z_shrink >= factor))

    def lipschitz_stable(self, rel: float = 0.1) -> bool:
        """The l-Lipschitz estimate changes by at most ``rel`` between grids."""
        lip = np.asarray(self.lipschitz_l)
        return bool(np.all(np.abs(np.diff(lip)) <= rel * np.maximum(np.abs(lip[:-1]), 1e-12)))

    def l_second_differences_diverge(self) -> bool:
        """Largest second l-difference grows with refinement (a kink in l)."""
        g = self.d2l_growth
        return bool(g.size > 0 and np.all(g >= 0.5 * self.ratio))


def _axis_ratio(a: GridSpec, b: GridSpec) -> dict:
    r = {"z": [x / y for x, y in zip(a.dz, b.dz)], "t": a.dt / b.dt}
    if a.n_l > 1 and b.n_l > 1:
        r["l"] = a.dl / b.dl
    return r


def regularity_probe(sol: PIDESolution, ladder: Sequence, model: ModelSpec,
                     z_probes: Sequence, l_probes: Sequence, t_probe: float = 0.0,
                     l_window: Optional[tuple] = None, solve_kwargs: Optional[dict] = None
                     ) -> RegularityReport:
    """Measure difference quotients of v across a refinement ladder.

    ``sol`` is the coarsest solution and ``ladder`` the finer levels, either
    as solutions or as grids (solved with ``sol``'s mode and theta).  All
    probes must be nodes of the coarsest grid and at least one node away
    from its faces.  The l-Lipschitz estimate is the largest
    ``|v(t, z, l + dl) - v(t, z, l)| / dl`` over all time levels, the probe
    z-nodes and l-nodes in ``l_window`` (default: whole l-grid).
    """
    kw = {"mode": sol.mode, "theta": sol.theta}
    kw.update(solve_kwargs or {})
    sols = [sol]
    for item in ladder:
        sols.append(item if isinstance(item, PIDESolution)
                    else solve_pide(model, item, compute_residual=False, **kw))
    if len(sols) < 3:
        raise ValueError("the ladder needs at least 3 grids")
    ratios = [_axis_ratio(a.grid, b.grid) for a, b in zip(sols[:-1], sols[1:])]
    r0 = ratios[0]["z"][0]
    for r in ratios:
        if any(abs(x - r0) > 1e-9 for x in r["z"]) or ("l" in r and abs(r["l"] - r0) > 1e-9):
            raise ValueError("ladder must refine z and l by one fixed ratio")
    ratio = int(round(r0))
    lw = l_window or (sol.grid.l_min, sol.grid.l_max)

    lips, d2z, d2l, dts = [], [], [], []
    for s in sols:
        g = s.grid
        V = s.values
        zi = [g.node_index(t_probe, z, l_probes[0])[1:-1] for z in z_probes]
        li = [g.node_index(t_probe, z_probes[0], l)[-1] for l in l_probes]
        ti = g.node_index(t_probe, z_probes[0], l_probes[0])[0]
        # Lipschitz in l, all times, probe z, l-window
        lmask = (g.l_nodes >= lw[0] - 1e-12) & (g.l_nodes <= lw[1] + 1e-12)
        lsel = np.flatnonzero(lmask)
        lip = 0.0
        for zidx in zi:
            col = V[(slice(None),) + zidx][:, lsel]
            if col.shape[1] > 1:
                lip = max(lip, float(np.max(np.abs(np.diff(col, axis=1))) / g.dl))
        lips.append(lip)
        a2z, a2l, a1t = [], [], []
        for zidx in zi:
            for lk in li:
                for ax in range(g.dim_z):
                    up = list(zidx); dn = list(zidx)
                    up[ax] += 1; dn[ax] -= 1
                    if dn[ax] < 0 or up[ax] >= g.n_z[ax]:
                        raise GridError("z-probe too close to the box face")
                    a2z.append((V[(ti, *up, lk)] - 2 * V[(ti, *zidx, lk)] + V[(ti, *dn, lk)])
                               / g.dz[ax] ** 2)
                if 0 < lk < g.n_l - 1:
                    a2l.append((V[(ti, *zidx, lk + 1)] - 2 * V[(ti, *zidx, lk)]
                                + V[(ti, *zidx, lk - 1)]) / g.dl ** 2)
                if ti + 1 <= g.n_t:
                    a1t.append((V[(ti + 1, *zidx, lk)] - V[(ti, *zidx, lk)]) / g.dt)
        d2z.append(np.array(a2z))
        d2l.append(np.array(a2l))
        dts.append(np.array(a1t))

    def cauchy(seq):
        return tuple(float(np.max(np.abs(b - a))) if a.size else 0.0
                     for a, b in zip(seq[:-1], seq[1:]))

    return RegularityReport(ratio, tuple(lips), tuple(d2z), cauchy(d2z), tuple(d2l),
                            cauchy(d2l), tuple(dts), cauchy(dts))


# ---------------------------------------------------------------------------
# Dynkin check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DynkinReport:
    mc_rate: float
    std_error: float
    generator: float
    h: float
    tolerance: float

    @property
    def difference(self) -> float:
        return abs(self.mc_rate - self.generator)

    @property
    def passed(self) -> bool:
        return self.difference <= self.tolerance


def generator_dynkin_check(model: ModelSpec, phi: SmoothFunction, t: float, x, h: float,
                           n_paths: int, seed: int, curvature_budget: float = 1.0,
                           dt_max: Optional[float] = None) -> DynkinReport:
    """Compare ``(E phi(X_{t+h}) - phi(x)) / h`` under the physical measure with
    the generator applied to phi at (t, x).

    Passes iff the gap is at most ``curvature_budget * h + 3 SE`` where SE is
    the standard error of the Monte Carlo rate.
    """
    if not 0 < h <= 0.05:
        raise ValueError("h must lie in (0, 0.05]")
    dt_max = h / 10 if dt_max is None else dt_max
    z, l = x
    z = np.atleast_1d(np.asarray(z, dtype=float))
    batch = simulate_batch(model, t, (z, float(l)), t + h, dt_max, seed, n_paths, PHYSICAL)
    phi0 = float(np.asarray(phi.value(z[None, :], np.array([float(l)])))[0])
    end = np.asarray(phi.value(batch.z_T, batch.l_T), dtype=float)
    rates = (end - phi0) / h
    res = summarize(rates, seed, "dynkin")
    gen = float(apply_generator(model, phi, t, (z, float(l))))
    return DynkinReport(res.mean, res.std_error, gen, h,
                        curvature_budget * h + 3.0 * res.std_error)
