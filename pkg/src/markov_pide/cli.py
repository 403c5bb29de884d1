"""``markov-pide`` command-line entry point.

Exit status: 0 success, 1 computation failure, 2 configuration or model
error, 3 comparison failure (``compare`` and ``demo``).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import export
from .acceptance import run_demo
from .catalog import build_catalog_model
from .config import ConfigError, RunConfig, key_line, load_config
from .feynman_kac import estimate_all
from .model import ModelError, SamplingBox, validate_assumptions
from .pide import GridError, GridSpec, StabilityError, solve_pide
from .simulate import PHYSICAL, REFERENCE, SimulationError, simulate_paths
from .verify import compare_mc_pide, regularity_probe

COMMANDS = ("validate", "simulate", "estimate", "solve", "compare", "demo")

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_COMPARE = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markov-pide",
                                description="Simulate, estimate and solve Markov-modulated "
                                            "point-process models.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="YAML run configuration (optional for demo)")
    p.add_argument("--seed", type=int, help="overrides simulation.seed")
    p.add_argument("--out", type=Path, help="overrides output.directory")
    return p


class _Run:
    """Resolved configuration plus output helpers for one invocation."""

    def __init__(self, cfg: RunConfig, text: str, seed_override, out_override):
        if seed_override is not None:
            if seed_override < 0:
                raise ConfigError("--seed must be >= 0")
            cfg = replace(cfg, simulation=replace(cfg.simulation, seed=seed_override))
        self.cfg = cfg
        self.seed = cfg.simulation.seed
        self.sha = export.sha256_text(text)
        self.out = Path(out_override) if out_override is not None else Path(cfg.output.directory)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out}: {exc}",
                              "output.directory") from None
        try:
            self.model = build_catalog_model(cfg.model.name, cfg.model.params)
        except ModelError as exc:
            raise ConfigError(str(exc), "model.params", key_line(text, "model")) from None
        if self.model.dim_z != len(cfg.initial_state.z0):
            raise ConfigError(f"z0 must have length {self.model.dim_z}", "initial_state.z0")

    @property
    def meta(self) -> dict:
        return export.run_meta(self.sha, self.seed)

    @property
    def x0(self):
        s = self.cfg.initial_state
        return np.asarray(s.z0, dtype=float), float(s.l0)

    def grid(self) -> GridSpec:
        g = self.cfg.grid
        if g is None:
            raise ConfigError("this command needs a 'grid' section", "grid")
        try:
            return GridSpec.for_model(self.model, self.cfg.horizon, g.dt, g.z_min, g.z_max,
                                      g.dz, g.l_min, g.l_max, g.dl, g.m_jumps)
        except GridError as exc:
            raise ConfigError(str(exc), "grid") from None

    def probes(self):
        if self.cfg.probes:
            return [(p.t, p.z, p.l) for p in self.cfg.probes]
        s = self.cfg.initial_state
        return [(s.t0, s.z0, s.l0)]


def cmd_validate(run: _Run) -> int:
    cfg = run.cfg
    if cfg.grid is not None:
        zlo, zhi = cfg.grid.z_min, cfg.grid.z_max
        lr = (cfg.grid.l_min, cfg.grid.l_max)
    else:
        z0 = np.asarray(cfg.initial_state.z0)
        zlo, zhi = tuple(z0 - 3.0), tuple(z0 + 3.0)
        lr = (cfg.initial_state.l0, cfg.initial_state.l0 + 10.0)
    box = SamplingBox((0.0, cfg.horizon), zlo, zhi, lr)
    report = validate_assumptions(run.model, box, seed=run.seed)
    path = export.write_validation(run.out / "validation.csv", report, run.meta)
    for c in report.checks:
        print(f"{c.assumption:12s} {c.status:5s} {c.message}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(run: _Run) -> int:
    sim = run.cfg.simulation
    ids = range(sim.n_trajectories)
    for measure in (REFERENCE, PHYSICAL):
        trajs = simulate_paths(run.model, run.cfg.initial_state.t0, run.x0, run.cfg.horizon,
                               sim.dt_max, run.seed, ids, measure)
        for tr in trajs:
            export.write_trajectory(run.out / f"trajectory_{measure}_{tr.path_index}.csv",
                                    tr, run.meta)
    print(f"wrote {2 * sim.n_trajectories} trajectories to {run.out}")
    return EXIT_OK


def cmd_estimate(run: _Run) -> int:
    sim = run.cfg.simulation
    results = estimate_all(run.model, run.cfg.initial_state.t0, run.x0, sim.n_paths,
                           sim.dt_max, run.seed, T=run.cfg.horizon)
    path = export.write_estimates(run.out / "estimates.csv", results, run.meta)
    for r in results:
        lo, hi = r.ci95
        print(f"{r.estimator_tag:18s} {r.mean:.6f} +- {r.std_error:.2e}  [{lo:.6f}, {hi:.6f}]")
    print(f"wrote {path}")
    return EXIT_OK


def _solve(run: _Run, grid: GridSpec = None):
    s = run.cfg.solver
    return solve_pide(run.model, grid or run.grid(), s.mode, s.theta, s.tol, s.max_iter)


def cmd_solve(run: _Run) -> int:
    sol = _solve(run)
    path = export.write_solution(run.out / "solution.csv", sol, run.meta)
    rs = sol.residual_stats
    print(f"mode {sol.mode}, iterations {sol.iterations}, converged {sol.converged}, "
          f"clamped destinations {sol.clamp_count}")
    if rs is not None:
        print(f"interior residual: max {rs.max_abs:.3e}, mean {rs.mean_abs:.3e}")
    print(f"wrote {path}")
    return EXIT_OK if sol.converged else EXIT_COMPUTE


def cmd_compare(run: _Run) -> int:
    grid = run.grid()
    sol = _solve(run, grid)
    sim = run.cfg.simulation
    try:
        report = compare_mc_pide(run.model, sol, run.probes(), sim.n_paths, run.seed,
                                 run.cfg.verify.grid_error_budget, sim.dt_max)
    except GridError as exc:
        raise ConfigError(str(exc), "probes") from None
    export.write_comparison(run.out, report, run.meta)
    print(report.summary())
    probes = run.probes()
    levels = run.cfg.verify.regularity_levels
    if levels == 0:
        return EXIT_OK if report.passed else EXIT_COMPARE
    ladder, g = [], grid
    for _ in range(levels - 1):
        g = g.refine(axes=("z", "l"))
        ladder.append(g)
    try:
        reg = regularity_probe(sol, ladder, run.model, z_probes=[p[1] for p in probes],
                               l_probes=sorted({p[2] for p in probes}), t_probe=probes[0][0])
    except GridError as exc:
        print(f"regularity probe skipped: {exc}")
    else:
        export.write_regularity(run.out / "regularity.csv", reg, run.meta)
        print("l-Lipschitz per level: " + ", ".join(f"{v:.4f}" for v in reg.lipschitz_l))
        print("z second-difference Cauchy gaps: "
              + ", ".join(f"{v:.3e}" for v in reg.d2z_cauchy))
    return EXIT_OK if report.passed else EXIT_COMPARE


def cmd_demo(seed: int, out) -> int:
    results = run_demo(seed)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        export.write_csv(out / "demo.csv", ["check", "passed", "detail"],
                         [[r.name, int(r.passed), r.detail] for r in results],
                         export.run_meta(export.sha256_text(""), seed))
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_COMPARE


_COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "estimate": cmd_estimate,
             "solve": cmd_solve, "compare": cmd_compare}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "demo" and args.config is None:
            return cmd_demo(42 if args.seed is None else args.seed, args.out)
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg, text = load_config(args.config)
        if args.command == "demo":
            seed = cfg.simulation.seed if args.seed is None else args.seed
            return cmd_demo(seed, args.out or cfg.output.directory)
        run = _Run(cfg, text, args.seed, args.out)
        return _COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (SimulationError, GridError, ArithmeticError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
