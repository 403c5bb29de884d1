"""Monte Carlo estimators of the value function v and of its xi-weighted lift.

``v(t, x) = E[ int_t^T e^{-int_t^s c} f(s, X_s) ds + e^{-int_t^T c} g(X_T) ]``
under the physical measure.  Under the reference measure the same quantity
is recovered by weighting each path with the Girsanov density, either on the
whole payoff (terminal form) or with xi_s inside the running integral
(running form).  Both forms equal ``xi0 * v(t, x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ModelSpec
from .simulate import PHYSICAL, REFERENCE, simulate_batch

PHYSICAL_TAG = "physical"
TERMINAL_TAG = "weighted_terminal"
RUNNING_TAG = "weighted_running"

Z95 = 1.96


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    estimator_tag: str
    n_flagged: int = 0
    t: float = math.nan
    x: tuple = ()

    @property
    def ci95(self) -> tuple:
        return (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)

    def overlaps(self, other: "EstimatorResult") -> bool:
        lo, hi = self.ci95
        olo, ohi = other.ci95
        return lo <= ohi and olo <= hi

    def scaled(self, alpha: float) -> "EstimatorResult":
        return EstimatorResult(alpha * self.mean, abs(alpha) * self.std_error,
                               self.n_paths, self.seed, self.estimator_tag,
                               self.n_flagged, self.t, self.x)


def summarize(values: np.ndarray, seed: int, tag: str, n_flagged: int = 0,
              t: float = math.nan, x: tuple = ()) -> EstimatorResult:
    """Mean and standard error of per-path values (stored in path order)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimatorResult(mean, se, n, int(seed), tag, int(n_flagged), float(t), x)


def _state_tuple(x) -> tuple:
    z, l = x
    return tuple(float(v) for v in np.ravel(z)) + (float(l),)


def physical_values(model: ModelSpec, t: float, x, T: float, n_paths: int,
                    dt_max: float, seed: int) -> tuple:
    batch = simulate_batch(model, t, x, T, dt_max, seed, n_paths, PHYSICAL)
    g = model.terminal(batch.z_T, batch.l_T)
    return batch.running + batch.discount * g, batch


def estimate_v_physical(model: ModelSpec, t: float, x, n_paths: int,
                        dt_max: float, seed: int, *, T: float) -> EstimatorResult:
    """Average the discounted payoff over physical-measure paths started at (t, x).

    Discount and running-cost integrals use the left-point rule on each
    path's simulation grid.
    """
    if not t < T:
        raise ValueError("need t < T")
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    values, batch = physical_values(model, t, x, T, n_paths, dt_max, seed)
    return summarize(values, seed, PHYSICAL_TAG, 0, t, _state_tuple(x))


def weighted_values(model: ModelSpec, t: float, x, T: float, n_paths: int,
                    dt_max: float, seed: int) -> tuple:
    """Per-path terminal-form and running-form values for xi_t = 1."""
    batch = simulate_batch(model, t, x, T, dt_max, seed, n_paths, REFERENCE)
    g = model.terminal(batch.z_T, batch.l_T)
    terminal = batch.xi_T * (batch.discount * g + batch.running)
    running = batch.xi_T * batch.discount * g + batch.running_weighted
    return terminal, running, batch


def check_state_in_domain(model: ModelSpec, t: float, xi0: float) -> None:
    bound = math.exp(model.reference_rate * t)
    if not 0.0 < xi0 <= bound * (1 + 1e-12):
        raise ValueError(
            f"xi0 = {xi0} outside (0, exp(lam~ t)] = (0, {bound:.6g}] at t = {t}")


def estimate_v_weighted(model: ModelSpec, t: float, x, xi0: float, n_paths: int,
                        dt_max: float, seed: int, form: str = "terminal", *,
                        T: float) -> EstimatorResult:
    """Estimate the xi-weighted value ``xi0 * v(t, x)`` under the reference measure.

    ``form="terminal"`` averages ``xi_T * (discounted payoff)``; ``"running"``
    puts ``xi_s`` inside the running-cost integral instead.  The density
    enters multiplicatively along each path, so the result is exactly
    ``xi0`` times the ``xi0 = 1`` estimate for the same seed.
    """
    if form not in ("terminal", "running"):
        raise ValueError(f"form must be 'terminal' or 'running', got {form!r}")
    if not t < T:
        raise ValueError("need t < T")
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    check_state_in_domain(model, t, xi0)
    terminal, running, batch = weighted_values(model, t, x, T, n_paths, dt_max, seed)
    values = terminal if form == "terminal" else running
    tag = TERMINAL_TAG if form == "terminal" else RUNNING_TAG
    res = summarize(values, seed, tag, int(batch.flagged.sum()), t, _state_tuple(x))
    return res if xi0 == 1.0 else res.scaled(xi0)


@dataclass(frozen=True)
class BayesReport:
    physical: EstimatorResult
    terminal: EstimatorResult
    running: EstimatorResult

    @property
    def overlaps(self) -> dict:
        return {
            ("physical", "terminal"): self.physical.overlaps(self.terminal),
            ("physical", "running"): self.physical.overlaps(self.running),
            ("terminal", "running"): self.terminal.overlaps(self.running),
        }

    @property
    def passed(self) -> bool:
        return all(self.overlaps.values())


def bayes_consistency(model: ModelSpec, t: float, x, n_paths: int, seeds: tuple,
                      *, T: float, dt_max: float = 0.01) -> BayesReport:
    """Physical vs. xi-weighted estimates of v at (t, x).

    The physical estimate uses ``seeds[0]``; both weighted forms use
    ``seeds[1]`` (one reference batch, two accumulations).
    """
    phys = estimate_v_physical(model, t, x, n_paths, dt_max, seeds[0], T=T)
    terminal, running, batch = weighted_values(model, t, x, T, n_paths, dt_max, seeds[1])
    flagged = int(batch.flagged.sum())
    st = _state_tuple(x)
    return BayesReport(
        phys,
        summarize(terminal, seeds[1], TERMINAL_TAG, flagged, t, st),
        summarize(running, seeds[1], RUNNING_TAG, flagged, t, st),
    )


def estimate_all(model: ModelSpec, t: float, x, n_paths: int, dt_max: float,
                 seed: int, *, T: float, xi0: float = 1.0,
                 weighted_seed: Optional[int] = None) -> list:
    """All three estimators, physical first; used by the CLI."""
    ws = seed if weighted_seed is None else weighted_seed
    phys = estimate_v_physical(model, t, x, n_paths, dt_max, seed, T=T)
    check_state_in_domain(model, t, xi0)
    terminal, running, batch = weighted_values(model, t, x, T, n_paths, dt_max, ws)
    flagged = int(batch.flagged.sum())
    st = _state_tuple(x)
    out = [phys]
    for vals, tag in ((terminal, TERMINAL_TAG), (running, RUNNING_TAG)):
        r = summarize(vals, ws, tag, flagged, t, st)
        out.append(r if xi0 == 1.0 else r.scaled(xi0))
    return out
