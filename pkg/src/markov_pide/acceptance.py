"""Desk-scale acceptance checks.

Each check returns a :class:`CheckResult` carrying its raw measurements, so
callers can re-derive the verdict.  ``run_demo`` runs every check on the cox
model and is what ``markov-pide demo`` prints.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .catalog import build_catalog_model
from .feynman_kac import bayes_consistency, estimate_v_physical, estimate_v_weighted
from .model import ModelSpec
from .pide import (GridSpec, pide_residual, residual_field, solve_pide_fixed_point,
                   solve_pide_imex)
from .simulate import PHYSICAL, REFERENCE, simulate_batch, simulate_paths
from .verify import compare_mc_pide, probe_seed, regularity_probe

# smooth state-dependent intensity, lam~ T = 2 for T = 1
COX_BUMP = {"intensity": "bump", "lam0": 1.0, "lam1": 1.0, "lam_bar": 2.0}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self, timing: bool = False) -> str:
        out = f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"
        return out + f" ({self.seconds:.1f}s)" if timing else out


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        res = fn(*args, **kwargs)
        return CheckResult(res.name, res.passed, res.detail,
                           time.perf_counter() - start, res.data)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def xi_bound_check(model: ModelSpec, n_paths: int = 100_000, seed: int = 0,
                   T: float = 1.0, dt_max: float = 0.01) -> CheckResult:
    """xi_t <= exp(lam~ t) + 1e-12 at every grid time of every reference path."""
    b = simulate_batch(model, 0.0, (np.zeros(model.dim_z), 0.0), T, dt_max, seed,
                       n_paths, REFERENCE)
    worst = float(b.xi_bound_excess.max())
    return CheckResult(f"xi bound ({model.name})", worst <= 1e-12,
                       f"max(xi - e^(lam~ t)) = {worst:.3e}", data={"worst_excess": worst})


@_timed
def martingale_check(model: ModelSpec, n_paths: int = 100_000, seed: int = 0,
                     T: float = 1.0, dt_max: float = 0.002) -> CheckResult:
    """Sample mean of xi_T within 3 SE of one.

    The left-point compensator sum biases E[xi_T] by roughly -0.2 dt for the
    bump intensity, so dt_max is kept small enough for the bias to sit well
    inside the statistical tolerance.
    """
    b = simulate_batch(model, 0.0, (np.zeros(model.dim_z), 0.0), T, dt_max, seed,
                       n_paths, REFERENCE)
    mean = float(b.xi_T.mean())
    se = float(b.xi_T.std(ddof=1) / math.sqrt(n_paths))
    ok = abs(mean - 1.0) <= 3 * se
    return CheckResult(f"xi martingale ({model.name})", ok,
                       f"mean xi_T = {mean:.5f} +- {se:.1e}", data={"mean": mean, "se": se})


@_timed
def estimator_equivalence(model: ModelSpec, probes, n_paths: int = 100_000,
                          seed: int = 0, T: float = 1.0, dt_max: float = 0.003) -> CheckResult:
    """Physical, weighted-terminal and weighted-running 95% CIs overlap pairwise.

    The weighted forms inherit the O(dt) bias of the left-point compensator
    (about one standard error of the difference at dt = 0.005 and n = 1e5),
    hence the finer default step.
    """
    reports = []
    for i, (t, z, l) in enumerate(probes):
        seeds = (probe_seed(seed, 2 * i), probe_seed(seed, 2 * i + 1))
        reports.append(bayes_consistency(model, t, (np.atleast_1d(z), l), n_paths, seeds,
                                         T=T, dt_max=dt_max))
    ok = all(r.passed for r in reports)
    worst = max(max(abs(r.physical.mean - r.terminal.mean), abs(r.physical.mean - r.running.mean))
                for r in reports)
    return CheckResult(f"estimator equivalence ({model.name})", ok,
                       f"{sum(r.passed for r in reports)}/{len(reports)} probes overlap, "
                       f"worst gap {worst:.4f}", data={"reports": reports})


def oracle_grid(model: ModelSpec, T: float = 1.0) -> GridSpec:
    return GridSpec.for_model(model, T, 1e-3, [-1.0], [1.0], 0.02, 0.0, 10.0, 1.0, 12)


@_timed
def closed_form_oracle(c0: float = 0.0, n_paths: int = 100_000, seed: int = 0,
                       dt_max: float = 0.01) -> CheckResult:
    """cox with lambda = 2, g = l, x = (0, 5), T - t = 1 against exp(-c0)(5 + 2)."""
    model = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0, "payoff": "l",
                                        "c0": c0})
    exact = math.exp(-c0) * (5.0 + 2.0)
    x = (np.array([0.0]), 5.0)
    phys = estimate_v_physical(model, 0.0, x, n_paths, dt_max, seed, T=1.0)
    wtd = estimate_v_weighted(model, 0.0, x, 1.0, n_paths, dt_max, seed + 1, T=1.0)
    sol = solve_pide_fixed_point(model, oracle_grid(model), compute_residual=False)
    pide = sol.at(0.0, [0.0], 5.0)
    ok_mc = all(abs(e.mean - exact) <= 3 * e.std_error for e in (phys, wtd))
    ok_pide = abs(pide - exact) <= 1e-3
    name = "closed-form oracle" if c0 == 0 else f"discounted oracle (c0={c0:g})"
    return CheckResult(name, ok_mc and ok_pide,
                       f"exact {exact:.6f}, MC {phys.mean:.4f}+-{phys.std_error:.1e} / "
                       f"{wtd.mean:.4f}+-{wtd.std_error:.1e}, PIDE {pide:.7f}",
                       data={"exact": exact, "physical": phys, "weighted": wtd, "pide": pide})


@_timed
def cross_validation(model: ModelSpec, grid: GridSpec, probes, n_paths: int = 100_000,
                     seed: int = 0, dt_max: float = 0.01) -> CheckResult:
    """Every probe satisfies |PIDE - MC| <= 3 SE + default budget."""
    sol = solve_pide_fixed_point(model, grid)
    rep = compare_mc_pide(model, sol, probes, n_paths, seed, dt_max=dt_max)
    return CheckResult(f"MC vs PIDE ({model.name})", rep.passed,
                       f"worst |diff| {rep.worst_abs:.2e}, budget {rep.budget:.2e}",
                       data={"report": rep})


def _interior_sup(a, b, model) -> float:
    _, mask = residual_field(a, model)
    return float(np.abs(a.values - b.values)[:, mask].max())


@_timed
def fixed_point_behavior(model: ModelSpec, grid: GridSpec, tol: float = 1e-8,
                         max_iter: int = 60) -> CheckResult:
    """Monotone delta decay after iteration 2, convergence, FP vs IMEX gap O(dt)."""
    a = solve_pide_fixed_point(model, grid, tol=tol, max_iter=max_iter)
    d = np.asarray(a.sup_norm_deltas)
    monotone = bool(np.all(np.diff(d[1:]) < 0))
    fine = grid.refine(axes=("t",))
    gaps = [_interior_sup(a, solve_pide_imex(model, grid), model)]
    b = solve_pide_fixed_point(model, fine, tol=tol, max_iter=max_iter)
    gaps.append(_interior_sup(b, solve_pide_imex(model, fine), model))
    order = math.log2(gaps[0] / gaps[1])
    ok = monotone and a.converged and a.iterations <= max_iter and order >= 0.9
    return CheckResult(f"fixed point ({model.name})", ok,
                       f"{a.iterations} iterations, monotone={monotone}, "
                       f"FP-IMEX gap {gaps[0]:.2e} -> {gaps[1]:.2e} (order {order:.2f})",
                       data={"deltas": d, "converged": a.converged, "iterations": a.iterations,
                             "monotone": monotone, "gaps": gaps, "order": order})


@_timed
def residual_orders(model: ModelSpec) -> CheckResult:
    """Residual order >= 0.9 in dt (theta = 1) and >= 1.8 in dz (theta = 1/2)."""
    gt = GridSpec.for_model(model, 1.0, 0.01, [-4.0], [4.0], 0.1, 0.0, 4.0, 1.0, 10)
    rt = pide_residual(solve_pide_fixed_point(model, gt, theta=1.0), model,
                       solve_pide_fixed_point(model, gt.refine(axes=("t",)), theta=1.0))
    gz = GridSpec.for_model(model, 1.0, 0.002, [-4.0], [4.0], 0.2, 0.0, 4.0, 1.0, 10)
    rz = pide_residual(solve_pide_fixed_point(model, gz), model,
                       solve_pide_fixed_point(model, gz.refine(axes=("z",))))
    ok = rt.order >= 0.9 and rz.order >= 1.8
    return CheckResult(f"residual convergence ({model.name})", ok,
                       f"order in dt {rt.order:.2f}, order in dz {rz.order:.2f}",
                       data={"dt": rt, "dz": rz})


def regularity_model() -> ModelSpec:
    return build_catalog_model("cox", {**COX_BUMP, "payoff": "abs_l", "K": 5.0})


@_timed
def regularity_asymmetry(model: ModelSpec = None) -> CheckResult:
    """Kinked g = |l - K|: l-Lipschitz estimate stable, z second differences converge."""
    model = model or regularity_model()
    g = GridSpec.for_model(model, 1.0, 0.01, [-4.0], [4.0], 0.1, 0.0, 8.0, 1.0, 12)
    sol = solve_pide_fixed_point(model, g, compute_residual=False)
    rep = regularity_probe(sol, [g.refine(), g.refine().refine()], model,
                           z_probes=[[-0.5], [0.0], [1.0]], l_probes=[3.0, 4.0, 5.0],
                           l_window=(0.0, 8.0))
    lip_ok = rep.lipschitz_stable(0.1)
    z_ok = rep.z_second_differences_converge(2.0)
    lip = ", ".join(f"{v:.4f}" for v in rep.lipschitz_l)
    shrink = ", ".join(f"{v:.2f}" for v in rep.d2z_shrink)
    growth = ", ".join(f"{v:.2f}" for v in rep.d2l_growth)
    return CheckResult("regularity asymmetry", lip_ok and z_ok,
                       f"Lip_l [{lip}], z-Cauchy shrink [{shrink}], "
                       f"max |d2l| growth [{growth}]", data={"report": rep})


@_timed
def coupling_identity(n_paths: int = 200, seed: int = 0) -> CheckResult:
    """With nu = 1 both simulators produce bit-identical (Z, L) and xi = 1."""
    model = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    x = (np.array([0.3]), 1.0)
    ids = range(n_paths)
    ref = simulate_paths(model, 0.0, x, 1.0, 0.01, seed, ids, REFERENCE)
    phy = simulate_paths(model, 0.0, x, 1.0, 0.01, seed, ids, PHYSICAL)
    same = all(np.array_equal(a.z_path, b.z_path) and np.array_equal(a.l_path, b.l_path)
               and np.array_equal(a.grid_times, b.grid_times) for a, b in zip(ref, phy))
    xi_one = all(np.all(a.xi_path == 1.0) for a in ref)
    br = simulate_batch(model, 0.0, x, 1.0, 0.01, seed, 10 * n_paths, REFERENCE)
    bp = simulate_batch(model, 0.0, x, 1.0, 0.01, seed, 10 * n_paths, PHYSICAL)
    same_batch = np.array_equal(br.z_T, bp.z_T) and np.array_equal(br.l_T, bp.l_T)
    xi_batch = bool(np.all(br.xi_T == 1.0))
    ok = same and xi_one and same_batch and xi_batch
    return CheckResult("coupling identity", ok,
                       f"paths identical={same and same_batch}, xi == 1: {xi_one and xi_batch}",
                       data={"identical": same and same_batch, "xi_one": xi_one and xi_batch})


def cox_probes():
    return [(0.0, [0.0], 5.0), (0.0, [0.5], 5.0), (0.0, [-1.0], 3.0),
            (0.5, [0.0], 2.0), (0.5, [1.0], 4.0)]


def cross_validation_grid(model: ModelSpec) -> GridSpec:
    return GridSpec.for_model(model, 1.0, 1e-3, [-3.0], [3.0], 0.02, 0.0, 6.0, 1.0, 12)


def fixed_point_grid(model: ModelSpec) -> GridSpec:
    return GridSpec.for_model(model, 1.0, 0.02, [-3.0], [3.0], 0.05, 0.0, 4.0, 0.25, 12)


def run_demo(seed: int = 42, report=print) -> list:
    """All checks on the cox model; ``report`` receives one line per check."""
    cox = build_catalog_model("cox", {**COX_BUMP, "payoff": "l"})
    fp_model = build_catalog_model("cox", {"intensity": "logistic", "lam0": 1.0, "lam1": 3.0,
                                           "lam_bar": 4.0, "payoff": "abs_l", "K": 3.0})
    steps = [
        lambda: xi_bound_check(cox, seed=seed),
        lambda: martingale_check(cox, seed=probe_seed(seed, 1)),
        lambda: estimator_equivalence(cox, cox_probes(), seed=probe_seed(seed, 2)),
        lambda: closed_form_oracle(0.0, seed=probe_seed(seed, 3)),
        lambda: closed_form_oracle(0.5, seed=probe_seed(seed, 4)),
        lambda: cross_validation(cox, cross_validation_grid(cox), cox_probes()[:3],
                                 seed=probe_seed(seed, 5)),
        lambda: fixed_point_behavior(fp_model, fixed_point_grid(fp_model)),
        lambda: residual_orders(cox),
        lambda: regularity_asymmetry(),
        lambda: coupling_identity(seed=seed),
    ]
    results = []
    for step in steps:
        res = step()
        results.append(res)
        if report is not None:
            report(res.line())
    return results
