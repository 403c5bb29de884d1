"""Run configuration: a YAML file with a fixed schema.

Example::

    model:
      name: cox
      params: {lam0: 2.0, lam_bar: 2.0, payoff: l}
    horizon: 1.0
    initial_state: {t0: 0.0, z0: [0.0], l0: 5.0}
    simulation: {dt_max: 0.01, n_paths: 100000, seed: 42, n_trajectories: 3}
    grid: {dt: 0.001, z_min: [-2.0], z_max: [2.0], dz: 0.02,
           l_min: 0.0, l_max: 10.0, dl: 1.0, m_jumps: 12}
    solver: {mode: fixed_point, tol: 1.0e-8, max_iter: 60, theta: 0.5}
    probes:
      - {t: 0.0, z: [0.0], l: 5.0}
    verify: {grid_error_budget: null, regularity_levels: 3}   # 0 skips the ladder
    output: {directory: out}

Only ``model``, ``horizon`` and ``initial_state.z0`` are required; ``grid``
is required by the commands that solve the PIDE.  Unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path, self.line = path, line
        where = f"{path}" if path else "config"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ModelSection:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class InitialState:
    z0: tuple
    t0: float = 0.0
    l0: float = 0.0


@dataclass(frozen=True)
class SimulationSection:
    dt_max: float = 0.01
    n_paths: int = 10000
    seed: int = 0
    n_trajectories: int = 3


@dataclass(frozen=True)
class GridSection:
    z_min: tuple
    z_max: tuple
    dz: tuple
    l_min: float
    l_max: float
    dt: float = 0.01
    dl: float = 1.0
    m_jumps: int = 12


@dataclass(frozen=True)
class SolverSection:
    mode: str = "fixed_point"
    tol: float = 1e-8
    max_iter: int = 60
    theta: float = 0.5


@dataclass(frozen=True)
class Probe:
    t: float
    z: tuple
    l: float


@dataclass(frozen=True)
class VerifySection:
    grid_error_budget: Optional[float] = None
    regularity_levels: int = 3


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection
    horizon: float
    initial_state: InitialState
    simulation: SimulationSection = SimulationSection()
    grid: Optional[GridSection] = None
    solver: SolverSection = SolverSection()
    probes: tuple = ()
    verify: VerifySection = VerifySection()
    output: OutputSection = OutputSection()

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v
        return plain(asdict(self))

    def to_yaml(self) -> str:
        d = self.to_dict()
        if d["grid"] is None:
            del d["grid"]
        return yaml.safe_dump(d, sort_keys=False)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _line(node) -> int:
    return node.start_mark.line + 1


def _construct(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _mapping(node, path: str, allowed: tuple, required: tuple = ()) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("expected a mapping", path, _line(node))
    out = {}
    for key_node, value_node in node.value:
        key = _construct(key_node)
        sub = f"{path}.{key}" if path else str(key)
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}; allowed: {', '.join(allowed)}",
                              sub, _line(key_node))
        if key in out:
            raise ConfigError("duplicate key", sub, _line(key_node))
        out[key] = value_node
    for key in required:
        if key not in out:
            raise ConfigError(f"missing required key {key!r}", path, _line(node))
    return out


def _scalar(node, path):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError("expected a scalar", path, _line(node))
    return _construct(node)


def _float(node, path, positive=False, allow_null=False):
    v = _scalar(node, path)
    if v is None and allow_null:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path, _line(node))
    if positive and not v > 0:
        raise ConfigError(f"must be > 0, got {v}", path, _line(node))
    return float(v)


def _int(node, path, minimum=None):
    v = _scalar(node, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}", path, _line(node))
    if minimum is not None and v < minimum:
        raise ConfigError(f"must be >= {minimum}, got {v}", path, _line(node))
    return int(v)


def _str(node, path):
    v = _scalar(node, path)
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}", path, _line(node))
    return v


def _vector(node, path):
    if isinstance(node, yaml.ScalarNode):
        return (_float(node, path),)
    if not isinstance(node, yaml.SequenceNode) or not node.value:
        raise ConfigError("expected a number or a non-empty list of numbers", path, _line(node))
    return tuple(_float(n, f"{path}[{i}]") for i, n in enumerate(node.value))


def _section(cls, node, path, schema: dict, required=()):
    """Parse a mapping into dataclass ``cls``; ``schema`` maps key -> converter."""
    fields = _mapping(node, path, tuple(schema), required)
    return cls(**{k: schema[k](v, f"{path}.{k}") for k, v in fields.items()})


_SIM = {"dt_max": lambda n, p: _float(n, p, positive=True),
        "n_paths": lambda n, p: _int(n, p, 2),
        "seed": lambda n, p: _int(n, p, 0),
        "n_trajectories": lambda n, p: _int(n, p, 1)}
_GRID = {"z_min": _vector, "z_max": _vector, "dz": _vector,
         "l_min": _float, "l_max": _float,
         "dt": lambda n, p: _float(n, p, positive=True),
         "dl": lambda n, p: _float(n, p, positive=True),
         "m_jumps": lambda n, p: _int(n, p, 0)}
_SOLVER = {"mode": _str, "tol": lambda n, p: _float(n, p, positive=True),
           "max_iter": lambda n, p: _int(n, p, 1), "theta": _float}


def _levels(node, path):
    v = _int(node, path, 0)
    if v in (1, 2):
        raise ConfigError("must be 0 (skip) or >= 3", path, _line(node))
    return v


_VERIFY = {"grid_error_budget": lambda n, p: _float(n, p, allow_null=True),
           "regularity_levels": _levels}


def _model(node, path):
    f = _mapping(node, path, ("name", "params"), ("name",))
    params = {}
    if "params" in f:
        pn = f["params"]
        if not isinstance(pn, yaml.MappingNode):
            raise ConfigError("expected a mapping", f"{path}.params", _line(pn))
        params = _construct(pn) or {}
    return ModelSection(_str(f["name"], f"{path}.name"), params)


def _probes(node, path):
    if not isinstance(node, yaml.SequenceNode):
        raise ConfigError("expected a list of probes", path, _line(node))
    out = []
    for i, item in enumerate(node.value):
        p = f"{path}[{i}]"
        out.append(_section(Probe, item, p, {"t": _float, "z": _vector, "l": _float},
                            ("t", "z", "l")))
    return tuple(out)


_TOP = {
    "model": _model,
    "horizon": lambda n, p: _float(n, p, positive=True),
    "initial_state": lambda n, p: _section(InitialState, n, p,
                                           {"t0": _float, "z0": _vector, "l0": _float},
                                           ("z0",)),
    "simulation": lambda n, p: _section(SimulationSection, n, p, _SIM),
    "grid": lambda n, p: _section(GridSection, n, p, _GRID,
                                  ("z_min", "z_max", "dz", "l_min", "l_max")),
    "solver": lambda n, p: _section(SolverSection, n, p, _SOLVER),
    "probes": _probes,
    "verify": lambda n, p: _section(VerifySection, n, p, _VERIFY),
    "output": lambda n, p: _section(OutputSection, n, p, {"directory": _str}),
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML text; raises ConfigError with the key path and line."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", "",
                          None if mark is None else mark.line + 1) from None
    if root is None:
        raise ConfigError("empty configuration")
    fields = _mapping(root, "", tuple(_TOP), ("model", "horizon", "initial_state"))
    cfg = RunConfig(**{k: _TOP[k](v, k) for k, v in fields.items()})
    _cross_check(cfg, fields)
    return cfg


def _cross_check(cfg: RunConfig, nodes: dict):
    if cfg.solver.mode not in ("fixed_point", "imex"):
        raise ConfigError(f"mode must be 'fixed_point' or 'imex', got {cfg.solver.mode!r}",
                          "solver.mode", _line(nodes["solver"]))
    if not 0.5 <= cfg.solver.theta <= 1.0:
        raise ConfigError(f"theta must lie in [0.5, 1], got {cfg.solver.theta}",
                          "solver.theta", _line(nodes["solver"]))
    if not 0.0 <= cfg.initial_state.t0 < cfg.horizon:
        raise ConfigError("t0 must lie in [0, horizon)", "initial_state.t0",
                          _line(nodes["initial_state"]))
    d = len(cfg.initial_state.z0)
    if cfg.grid is not None:
        g = cfg.grid
        line = _line(nodes["grid"])
        if len(g.z_min) != d or len(g.z_max) != d or len(g.dz) not in (1, d):
            raise ConfigError(f"z_min, z_max and dz must have length {d}", "grid", line)
        if d > 2:
            raise ConfigError("the PIDE grid supports at most 2 z-dimensions", "grid", line)
        if g.l_max < g.l_min:
            raise ConfigError("l_max must be >= l_min", "grid", line)
    for i, p in enumerate(cfg.probes):
        if len(p.z) != d:
            raise ConfigError(f"probe z must have length {d}", f"probes[{i}].z",
                              _line(nodes["probes"]))


def load_config(path) -> tuple:
    """Read a config file; returns ``(RunConfig, raw_text)``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    return parse_config(text), text


def key_line(text: str, key: str) -> Optional[int]:
    """Line of a top-level key, for diagnostics raised after parsing."""
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    for key_node, _ in getattr(root, "value", []):
        if key_node.value == key:
            return _line(key_node)
    return None
