"""CSV artifacts with a ``# key: value`` metadata header.

Floats are written with ``repr`` (17 significant digits in solution tables)
so that reading a file back gives the exact values that were written.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .pide import GridSpec, PIDESolution, ResidualStats


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows, meta=None) -> Path:
    """Write a header block of ``# key: value`` lines, then a plain CSV table."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Returns ``(meta, columns, rows)`` with rows as lists of strings."""
    meta, lines = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                meta[key.strip()] = value.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    return meta, columns, [row for row in reader]


def run_meta(config_sha256: str, seed) -> dict:
    return {"config_sha256": config_sha256, "seed": seed}


def write_trajectory(path, traj, meta=None) -> Path:
    d = traj.z_path.shape[1]
    columns = ["time"] + [f"z_{i + 1}" for i in range(d)] + ["l", "xi", "event_flag",
                                                               "mark_index", "accepted"]
    by_time = {e.time: e for e in traj.events}
    rows = []
    for k, t in enumerate(traj.grid_times):
        e = by_time.get(float(t)) if k > 0 else None
        flag, mark, acc = (1, e.mark, int(e.accepted)) if e is not None else (0, -1, -1)
        rows.append([float(t), *traj.z_path[k], float(traj.l_path[k]),
                     float(traj.xi_path[k]), flag, mark, acc])
    m = dict(meta or {})
    m.update({"measure": traj.measure_tag, "path_index": traj.path_index,
              "dt_max": traj.dt_max})
    return write_csv(path, columns, rows, m)


def write_estimates(path, results, meta=None) -> Path:
    d = len(results[0].x) - 1 if results else 1
    columns = (["estimator_tag", "t"] + [f"z_{i + 1}" for i in range(d)]
               + ["l", "mean", "std_error", "ci_lo", "ci_hi", "n_paths", "seed"])
    rows = []
    for r in results:
        lo, hi = r.ci95
        rows.append([r.estimator_tag, r.t, *r.x, r.mean, r.std_error, lo, hi,
                     r.n_paths, r.seed])
    return write_csv(path, columns, rows, meta)


def write_validation(path, report, meta=None) -> Path:
    columns = ["assumption", "status", "worst_value", "location", "message"]
    rows = [[c.assumption, c.status, c.worst_value, c.location, c.message]
            for c in report.checks]
    m = dict(meta or {})
    m["passed"] = int(report.passed)
    return write_csv(path, columns, rows, m)


def write_solution(path, sol: PIDESolution, meta=None) -> Path:
    g = sol.grid
    d = g.dim_z
    columns = ["t"] + [f"z_{i + 1}" for i in range(d)] + ["l", "value"]
    mesh = np.meshgrid(g.t_nodes, *g.z_axes, g.l_nodes, indexing="ij")
    table = np.stack([m.ravel() for m in mesh] + [sol.values.ravel()], axis=1)
    rs = sol.residual_stats
    m = dict(meta or {})
    m.update({
        "grid": json.dumps(g.to_dict()),
        "mode": sol.mode, "theta": repr(sol.theta), "iterations": sol.iterations,
        "converged": int(sol.converged),
        "sup_norm_deltas": json.dumps([float(x) for x in sol.sup_norm_deltas]),
        "clamp_count": sol.clamp_count,
        "bounds": json.dumps([float(x) for x in sol.bounds]),
        "residual": json.dumps(None if rs is None else
                               {"max_abs": rs.max_abs, "mean_abs": rs.mean_abs,
                                "n_points": rs.n_points}),
    })
    path = Path(path)
    with path.open("w", newline="") as fh:
        for key, value in m.items():
            fh.write(f"# {key}: {value}\n")
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, table, delimiter=",", fmt="%.17g")
    return path


def read_solution(path) -> PIDESolution:
    """Rebuild a PIDESolution from :func:`write_solution` output."""
    meta, header = {}, 0
    with Path(path).open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            header += 1
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
    table = np.loadtxt(path, delimiter=",", skiprows=header + 1, ndmin=2)
    grid = GridSpec(**json.loads(meta["grid"]))
    values = table[:, -1].reshape((grid.n_t + 1,) + grid.space_shape)
    rs = json.loads(meta["residual"])
    return PIDESolution(
        values=values, grid=grid, mode=meta["mode"], theta=float(meta["theta"]),
        iterations=int(meta["iterations"]),
        sup_norm_deltas=tuple(json.loads(meta["sup_norm_deltas"])),
        converged=bool(int(meta["converged"])), clamp_count=int(meta["clamp_count"]),
        bounds=tuple(json.loads(meta["bounds"])),
        residual_stats=None if rs is None else ResidualStats(**rs))


def write_comparison(directory, report, meta=None) -> tuple:
    directory = Path(directory)
    rows = report.rows()
    columns = list(rows[0]) if rows else ["t", "l", "pide"]
    m = dict(meta or {})
    m.update({"budget": repr(report.budget), "n_paths": report.n_paths,
              "passed": int(report.passed)})
    csv_path = write_csv(directory / "comparison.csv", columns,
                         [list(r.values()) for r in rows], m)
    txt_path = directory / "comparison.txt"
    txt_path.write_text(report.summary() + "\n")
    return csv_path, txt_path


def write_regularity(path, report, meta=None) -> Path:
    columns = ["level", "lipschitz_l", "d2z_max", "d2l_max", "dt_max",
               "d2z_cauchy", "d2l_cauchy", "dt_cauchy"]
    n = len(report.lipschitz_l)
    rows = []
    for k in range(n):
        prev = k - 1
        rows.append([
            k, report.lipschitz_l[k],
            float(np.max(np.abs(report.d2z[k]))) if report.d2z[k].size else math.nan,
            float(np.max(np.abs(report.d2l[k]))) if report.d2l[k].size else math.nan,
            float(np.max(np.abs(report.dt[k]))) if report.dt[k].size else math.nan,
            report.d2z_cauchy[prev] if k else math.nan,
            report.d2l_cauchy[prev] if k else math.nan,
            report.dt_cauchy[prev] if k else math.nan,
        ])
    m = dict(meta or {})
    m["ratio"] = report.ratio
    return write_csv(path, columns, rows, m)
