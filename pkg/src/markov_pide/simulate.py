"""Path simulation of X = (Z, L) under the reference and physical measures.

Under the reference measure the marked point process is an exogenous
Poisson stream of rate ``lam~`` (the mass of the mark measure) with marks
drawn from ``w_k / lam~``; the Girsanov density xi is carried along in
product form.  Under the physical measure the same proposals are thinned
with acceptance probability ``nu(T_n, X_{T_n-}, U_n)``.

Each path owns a Philox stream keyed by ``(seed, path_index)`` and both
simulators consume it in the same order:

    1. number of proposals      poisson(lam~ (T - t0))
    2. uniforms (3 n)           event times | mark choice | thinning
    3. normals  (steps, d)      Euler-Maruyama increments

so the two measures share proposals and Brownian increments, and a model
with ``nu == 1`` gives identical (Z, L) paths under both.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ModelSpec

REFERENCE = "reference"
PHYSICAL = "physical"

_CHUNK_BUDGET = 1 << 22  # padded array elements per chunk


class SimulationError(RuntimeError):
    """A path produced a non-finite state."""


@dataclass(frozen=True)
class Event:
    time: float
    mark: int
    accepted: bool
    nu: float
    z_pre: tuple
    l_pre: float


@dataclass(frozen=True)
class Trajectory:
    """One simulated path on its merged (base grid + event times) time grid.

    States are stored right-continuous: the row at an event time holds the
    post-jump state.
    """

    measure_tag: str
    grid_times: np.ndarray
    z_path: np.ndarray  # (n_times, d)
    l_path: np.ndarray
    xi_path: np.ndarray
    events: tuple
    seed: int
    dt_max: float
    path_index: int = 0
    flagged: bool = False

    @property
    def event_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    @property
    def n_accepted(self) -> int:
        return sum(e.accepted for e in self.events)


@dataclass(frozen=True)
class PathBatch:
    """Per-path summaries of a batch simulated from a common initial state.

    ``discount`` is exp(-int c ds) at the horizon; ``running`` is the
    left-point sum of exp(-int c) f ds and ``running_weighted`` the same sum
    with xi_s inside the integral (reference measure only).
    """

    measure_tag: str
    z_T: np.ndarray
    l_T: np.ndarray
    xi_T: np.ndarray
    discount: np.ndarray
    running: np.ndarray
    running_weighted: np.ndarray
    n_proposed: np.ndarray
    n_accepted: np.ndarray
    xi_bound_excess: np.ndarray  # max_t (xi_t - exp(lam~ (t - t0)))
    seed: int
    dt_max: float

    @property
    def n_paths(self) -> int:
        return self.l_T.size

    @property
    def flagged(self) -> np.ndarray:
        """Paths whose density hit zero (an event with nu = 0)."""
        return self.xi_T == 0.0


def base_grid(t0: float, T: float, dt_max: float) -> np.ndarray:
    """Uniform grid from t0 to T with spacing <= dt_max, landing exactly on T."""
    n = max(1, int(math.ceil((T - t0) / dt_max - 1e-9)))
    grid = np.linspace(t0, T, n + 1)
    grid[-1] = T
    return grid


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(path_index)]))


class _StreamFactory:
    """Reuses one Philox object, re-keying it per path (same stream as path_rng)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.bitgen = np.random.Philox(key=[self.seed, 0])
        self.gen = np.random.Generator(self.bitgen)
        self.state = self.bitgen.state

    def __call__(self, path_index: int) -> np.random.Generator:
        st = self.state
        st["state"]["key"][:] = (self.seed, int(path_index))
        st["state"]["counter"][:] = 0
        st["buffer"][:] = 0
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self.bitgen.state = st
        return self.gen


@dataclass
class _Draws:
    # step-major, so each Euler step reads contiguous rows
    times: np.ndarray      # (S + 1, B) padded with T
    event_mark: np.ndarray  # (S, B) mark index of the event closing step k, -1 if none
    thin: np.ndarray       # (S, B) thinning uniforms at event steps
    normals: np.ndarray    # (S, B, d)
    lengths: np.ndarray    # grid size of each path


def _draw_chunk(model: ModelSpec, seed: int, path_ids, t0: float, T: float,
                grid: np.ndarray) -> _Draws:
    rate = model.reference_rate * (T - t0)
    cum = np.cumsum(model.mark_measure.probabilities)
    cum[-1] = 1.0
    d = model.dim_z
    K = grid.size - 1
    streams = _StreamFactory(seed)
    counts, uniforms, normals = [], [], []
    for pid in path_ids:
        g = streams(pid)
        n = int(g.poisson(rate))
        counts.append(n)
        uniforms.append(g.random(3 * n))
        # every proposal splits one base step in two
        normals.append(g.standard_normal((K + n) * d))
    B = len(counts)
    counts = np.asarray(counts, dtype=np.int64)
    lengths = K + 1 + counts
    S = int(lengths.max()) - 1
    times = np.full((S + 1, B), float(T))
    event_mark = np.full((S, B), -1, dtype=np.int64)
    thin_arr = np.ones((S, B))
    normals_pad = np.zeros((S, B, d))

    for i, nz in enumerate(normals):
        normals_pad[:nz.size // d, i] = nz.reshape(-1, d)

    is_event = np.zeros((S + 1, B), dtype=bool)
    total = int(counts.sum())
    if total:
        u = np.concatenate(uniforms)
        starts3 = np.repeat(3 * (np.cumsum(counts) - counts), counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        ev_row = np.repeat(np.arange(B), counts)
        ev_time = t0 + (T - t0) * (1.0 - u[starts3 + within])  # in (t0, T]
        ev_mark = np.searchsorted(cum, u[starts3 + counts[ev_row] + within], side="right")
        ev_thin = u[starts3 + 2 * counts[ev_row] + within]
        order = np.lexsort((ev_time, ev_row))
        ev_time = ev_time[order]
        # marks and thinning uniforms stay attached to their draw index, so
        # the k-th proposal in time order uses the k-th mark/thin draw
        rank = within
        pos = np.searchsorted(grid, ev_time, side="left") + rank
        times[pos, ev_row] = ev_time
        is_event[pos, ev_row] = True
        event_mark[pos - 1, ev_row] = ev_mark
        thin_arr[pos - 1, ev_row] = ev_thin
    base = ~is_event
    base_rank = np.cumsum(base, axis=0) - 1
    fill = base & (base_rank <= K)
    times[fill] = grid[base_rank[fill]]
    return _Draws(times, event_mark, thin_arr, normals_pad, lengths)


def _run_chunk(model: ModelSpec, measure: str, draws: _Draws, z0, l0, t0: float,
               record: bool):
    """Propagate a chunk of paths through their padded step arrays."""
    times, event_mark, normals = draws.times, draws.event_mark, draws.normals
    S1, B = times.shape
    S = S1 - 1
    steps = np.diff(times, axis=0)
    root_steps = np.sqrt(steps)
    d = model.dim_z
    w = model.mark_measure.weights
    lam = model.reference_rate
    ref = measure == REFERENCE
    z = np.broadcast_to(np.asarray(z0, float), (B, d)).copy()
    l = np.full(B, float(l0))
    log_xi = np.zeros(B)
    xi = np.ones(B)
    cint = np.zeros(B)
    running = np.zeros(B)
    running_w = np.zeros(B)
    n_prop = np.zeros(B, dtype=np.int64)
    n_acc = np.zeros(B, dtype=np.int64)
    excess = np.full(B, -np.inf)
    rows = np.arange(B)
    if record:
        rec_z = np.empty((B, S1, d))
        rec_l = np.empty((B, S1))
        rec_xi = np.empty((B, S1))
        rec_z[:, 0], rec_l[:, 0], rec_xi[:, 0] = z, l, xi
        ev_nu = np.full((B, S), np.nan)
        ev_acc = np.zeros((B, S), dtype=bool)
        ev_zpre = np.zeros((B, S, d))
        ev_lpre = np.zeros((B, S))
    excess = np.maximum(excess, xi - 1.0)
    for k in range(S):
        t = times[k]
        h = steps[k]
        c = model.discount(t, z, l)
        f = model.running_cost(t, z, l)
        disc = np.exp(-cint)
        running += disc * f * h
        if ref:
            running_w += (xi * disc) * f * h
            nu = model.nu_density(t, z, l)
            log_xi += h * ((1.0 - nu) @ w)
        cint += c * h
        a = model.drift(t, z, l)
        b = model.dispersion(t, z, l)
        dw = root_steps[k][:, None] * normals[k]
        z = z + a * h[:, None] + np.einsum("nij,nj->ni", b, dw)
        marks = event_mark[k]
        hit = marks >= 0
        if hit.any():
            idx = rows[hit]
            te = times[k + 1, idx]
            ze, le = z[idx], l[idx]
            mk = marks[idx]
            nu_e = model.nu_density(te, ze, le)[np.arange(idx.size), mk]
            if ref:
                accept = np.ones(idx.size, dtype=bool)
                with np.errstate(divide="ignore"):
                    log_xi[idx] += np.log(nu_e)
            else:
                accept = draws.thin[k, idx] < nu_e
            if record:
                ev_nu[idx, k] = nu_e
                ev_acc[idx, k] = accept
                ev_zpre[idx, k] = ze
                ev_lpre[idx, k] = le
            n_prop[idx] += 1
            j = idx[accept]
            if j.size:
                mj = mk[accept]
                gz = model.jump_z(te[accept], ze[accept], le[accept])
                gl = model.jump_l(te[accept], ze[accept], le[accept])
                sel = np.arange(j.size)
                z[j] = ze[accept] + gz[sel, mj]
                l[j] = le[accept] + gl[sel, mj]
                n_acc[j] += 1
        if ref:
            xi = np.exp(log_xi)
            np.maximum(excess, xi - np.exp(lam * (times[k + 1] - t0)), out=excess)
        if record:
            rec_z[:, k + 1], rec_l[:, k + 1], rec_xi[:, k + 1] = z, l, xi
    out = {
        "z_T": z, "l_T": l, "xi_T": xi, "discount": np.exp(-cint),
        "running": running, "running_weighted": running_w if ref else running.copy(),
        "n_proposed": n_prop, "n_accepted": n_acc, "xi_bound_excess": excess,
    }
    bad = ~(np.all(np.isfinite(z), axis=1) & np.isfinite(l) & np.isfinite(xi)
            & np.isfinite(running) & np.isfinite(cint))
    if bad.any():
        i = int(np.argmax(bad))
        raise SimulationError(
            f"non-finite state on chunk row {i}: z={z[i]}, l={l[i]}, xi={xi[i]}")
    if record:
        out["record"] = (rec_z, rec_l, rec_xi, ev_nu, ev_acc, ev_zpre, ev_lpre)
    return out


def _check_args(t0, T, dt_max):
    if not t0 < T:
        raise ValueError(f"need t0 < T, got t0={t0}, T={T}")
    if not dt_max > 0:
        raise ValueError(f"dt_max must be > 0, got {dt_max}")


def _split_state(model: ModelSpec, x0):
    z0, l0 = x0
    z0 = np.asarray(z0, dtype=float).reshape(model.dim_z)
    return z0, float(l0)


def worker_count() -> int:
    """Worker cap from MARKOV_PIDE_THREADS (0 or unset = one per CPU)."""
    raw = os.environ.get("MARKOV_PIDE_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


def _chunks(n_paths: int, steps: int, d: int, chunk_size: Optional[int]):
    if chunk_size is None:
        chunk_size = int(np.clip(_CHUNK_BUDGET // max(1, (steps + 8) * d), 256, 16384))
    return [range(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


def simulate_paths(model: ModelSpec, t0: float, x0, T: float, dt_max: float,
                   seed: int, path_ids, measure: str = REFERENCE) -> list:
    """Simulate and record the given path indices as Trajectory objects."""
    _check_args(t0, T, dt_max)
    if measure not in (REFERENCE, PHYSICAL):
        raise ValueError(f"unknown measure {measure!r}")
    z0, l0 = _split_state(model, x0)
    grid = base_grid(t0, T, dt_max)
    path_ids = list(path_ids)
    draws = _draw_chunk(model, seed, path_ids, t0, T, grid)
    out = _run_chunk(model, measure, draws, z0, l0, t0, record=True)
    rec_z, rec_l, rec_xi, ev_nu, ev_acc, ev_zpre, ev_lpre = out["record"]
    trajs = []
    for i, pid in enumerate(path_ids):
        n_times = int(draws.lengths[i])
        events = []
        for k in np.where(draws.event_mark[:, i] >= 0)[0]:
            events.append(Event(
                time=float(draws.times[k + 1, i]), mark=int(draws.event_mark[k, i]),
                accepted=bool(ev_acc[i, k]), nu=float(ev_nu[i, k]),
                z_pre=tuple(float(v) for v in ev_zpre[i, k]), l_pre=float(ev_lpre[i, k])))
        xi_path = rec_xi[i, :n_times].copy()
        trajs.append(Trajectory(
            measure_tag=measure, grid_times=draws.times[:n_times, i].copy(),
            z_path=rec_z[i, :n_times].copy(), l_path=rec_l[i, :n_times].copy(),
            xi_path=xi_path, events=tuple(events), seed=int(seed),
            dt_max=float(dt_max), path_index=int(pid),
            flagged=bool(np.any(xi_path == 0.0))))
    return trajs


def simulate_reference_path(model: ModelSpec, t0: float, x0, T: float,
                            dt_max: float, seed: int, path_index: int = 0) -> Trajectory:
    """Simulate one path under the reference measure, carrying xi in product form.

    Jump times form a Poisson stream of rate lam~ with marks drawn from
    w_k / lam~.  Between events Z follows Euler-Maruyama with steps of at most
    ``dt_max`` landing exactly on event times and on T.  xi is multiplied by
    ``exp(h * sum_k w_k (1 - nu))`` per step (left endpoint) and by
    ``nu(T_n, X_{T_n-}, U_n)`` at events.
    """
    return simulate_paths(model, t0, x0, T, dt_max, seed, [path_index], REFERENCE)[0]


def simulate_physical_path(model: ModelSpec, t0: float, x0, T: float,
                           dt_max: float, seed: int, path_index: int = 0) -> Trajectory:
    """Simulate one path under the physical measure by thinning.

    Proposals arrive exactly as in :func:`simulate_reference_path`; each is
    accepted with probability nu evaluated at the pre-jump state.  Only
    accepted events move Z and L, and xi stays identically one.
    """
    return simulate_paths(model, t0, x0, T, dt_max, seed, [path_index], PHYSICAL)[0]


def simulate_batch(model: ModelSpec, t0: float, x0, T: float, dt_max: float,
                   seed: int, n_paths: int, measure: str = REFERENCE,
                   chunk_size: Optional[int] = None,
                   workers: Optional[int] = None) -> PathBatch:
    """Simulate ``n_paths`` paths (indices 0..n-1) and return per-path summaries.

    Chunks may run on a thread pool; results are stored by path index, so the
    output does not depend on the worker count or chunk size.
    """
    _check_args(t0, T, dt_max)
    if measure not in (REFERENCE, PHYSICAL):
        raise ValueError(f"unknown measure {measure!r}")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    z0, l0 = _split_state(model, x0)
    grid = base_grid(t0, T, dt_max)
    expected = model.reference_rate * (T - t0)
    steps = grid.size + int(expected + 6 * math.sqrt(expected) + 4)
    chunks = _chunks(n_paths, steps, model.dim_z, chunk_size)

    def work(ids):
        draws = _draw_chunk(model, seed, ids, t0, T, grid)
        return _run_chunk(model, measure, draws, z0, l0, t0, record=False)

    workers = worker_count() if workers is None else workers
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(ids) for ids in chunks]
    cat = {key: np.concatenate([r[key] for r in results]) for key in results[0]}
    return PathBatch(measure_tag=measure, seed=int(seed), dt_max=float(dt_max), **cat)


def xi_sde_check(traj: Trajectory, model: ModelSpec) -> float:
    """Re-integrate xi in stochastic-exponential form and compare with the stored path.

    Between events ``xi <- xi (1 + h sum_k w_k (1 - nu))`` at the left endpoint
    (Euler for the compensator); at events ``xi <- xi nu``.  Returns the max
    absolute deviation from ``traj.xi_path``.
    """
    if traj.measure_tag != REFERENCE:
        raise ValueError("xi_sde_check needs a reference-measure trajectory")
    times = traj.grid_times
    w = model.mark_measure.weights
    t = times[:-1]
    nu = model.nu_density(t, traj.z_path[:-1], traj.l_path[:-1])
    growth = 1.0 + np.diff(times) * ((1.0 - nu) @ w)
    jump = np.ones(times.size - 1)
    for e in traj.events:
        k = int(np.searchsorted(times, e.time, side="left"))
        jump[k - 1] *= e.nu
    xi = np.concatenate([[1.0], np.cumprod(growth * jump)])
    return float(np.max(np.abs(xi - traj.xi_path)))
