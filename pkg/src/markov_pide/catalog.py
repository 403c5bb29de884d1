"""Parameterized catalog of Cox-type models.

Every catalog model has a one-dimensional modulating factor Z and a loss
process L whose jump rate is ``lambda(Z)``.  The reference measure runs jumps
at the constant rate ``lam_bar`` and the physical measure thins them with
density ``lambda(z) / lam_bar``, so ``lam_bar`` must dominate ``lambda``.

Common parameters
-----------------
intensity : {"constant", "bump", "saturating", "logistic"}
    constant    lambda(z) = lam0
    bump        lambda(z) = lam0 + lam1 / (1 + z^2)
    saturating  lambda(z) = lam0 + lam1 z^2 / (1 + z^2)
    logistic    lambda(z) = lam0 + lam1 / (1 + exp(-z))
lam0, lam1, lam_bar : float
c0, f0 : float
    Constant discount rate and running cost.
payoff : {"constant", "l", "abs_l", "capped_l", "z2"}
    g = g0, l, |l - K|, min(l, K), z^2.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.laguerre import laggauss

from .model import DeclaredBounds, MarkMeasure, ModelError, ModelSpec

CATALOG = ("cox", "compound_cox", "ou_modulated_cox", "joint_jump")

_COMMON = {
    "intensity": "constant", "lam0": None, "lam1": 0.0, "lam_bar": None,
    "c0": 0.0, "f0": 0.0, "payoff": "l", "g0": 1.0, "K": 0.0,
}
_DEFAULTS = {
    "cox": {"mu": 0.0, "sigma": 1.0},
    "compound_cox": {"mu": 0.0, "sigma": 1.0, "jump_sizes": [1.0],
                     "jump_probs": None, "jump_dist": "discrete",
                     "jump_mean": 1.0, "n_nodes": 8},
    "ou_modulated_cox": {"kappa": 1.0, "theta": 0.0, "sigma": 0.5},
    "joint_jump": {"kappa": 1.0, "theta": 0.0, "sigma": 0.5,
                   "eta": 0.5, "p_joint": 0.5},
}

# intensity families: (lambda(z), sup over z, inf over z)
def _intensity(kind: str, lam0: float, lam1: float):
    if kind == "constant":
        return (lambda z: np.full(z.shape, lam0)), lam0, lam0
    if kind == "bump":
        fn = lambda z: lam0 + lam1 / (1.0 + z * z)
    elif kind == "saturating":
        fn = lambda z: lam0 + lam1 * z * z / (1.0 + z * z)
    elif kind == "logistic":
        fn = lambda z: lam0 + lam1 / (1.0 + np.exp(-z))
    else:
        raise ModelError(f"unknown intensity family {kind!r}")
    return fn, lam0 + max(lam1, 0.0), lam0 + min(lam1, 0.0)


def _payoff(kind: str, g0: float, K: float):
    """Returns (g, sup|g|, Lipschitz constant of g)."""
    if kind == "constant":
        return (lambda z, l: np.full(l.shape, g0)), abs(g0), 0.0
    if kind == "l":
        return (lambda z, l: np.array(l, dtype=float)), math.inf, 1.0
    if kind == "abs_l":
        return (lambda z, l: np.abs(l - K)), math.inf, 1.0
    if kind == "capped_l":
        return (lambda z, l: np.minimum(l, K)), math.inf, 1.0
    if kind == "z2":
        return (lambda z, l: z[:, 0] ** 2), math.inf, math.inf
    raise ModelError(f"unknown payoff {kind!r}")


def _merge(name: str, params: dict) -> dict:
    allowed = dict(_COMMON)
    allowed.update(_DEFAULTS[name])
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise ModelError(f"unknown parameter(s) for {name}: {', '.join(unknown)}")
    merged = dict(allowed)
    merged.update(params)
    for key in ("lam0", "lam_bar"):
        if merged[key] is None:
            raise ModelError(f"missing parameter {key!r} for {name}")
    for key, val in merged.items():
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            if not math.isfinite(val):
                raise ModelError(f"parameter {key!r} must be finite")
    return merged


def _jump_nodes(p: dict):
    """Jump sizes and probabilities of the mark distribution for L."""
    if p["jump_dist"] == "discrete":
        sizes = np.asarray(p["jump_sizes"], dtype=float).ravel()
        if sizes.size == 0:
            raise ModelError("jump_sizes must be non-empty")
        if p["jump_probs"] is None:
            probs = np.full(sizes.size, 1.0 / sizes.size)
        else:
            probs = np.asarray(p["jump_probs"], dtype=float).ravel()
            if probs.size != sizes.size or np.any(probs <= 0):
                raise ModelError("jump_probs must be positive, one per jump size")
            probs = probs / probs.sum()
        return sizes, probs
    if p["jump_dist"] == "exponential":
        m = float(p["jump_mean"])
        if m <= 0:
            raise ModelError("jump_mean must be > 0")
        x, w = laggauss(int(p["n_nodes"]))
        return m * x, w / w.sum()
    raise ModelError(f"unknown jump_dist {p['jump_dist']!r}")


def build_catalog_model(name: str, params: dict) -> ModelSpec:
    """Build one of the catalog models from a parameter map.

    Raises
    ------
    ModelError
        Unknown name or parameter, invalid values, or an intensity that
        exceeds ``lam_bar`` somewhere (density above one).
    """
    if name not in CATALOG:
        raise ModelError(f"unknown model {name!r}; choose from {', '.join(CATALOG)}")
    p = _merge(name, dict(params))
    lam_bar = float(p["lam_bar"])
    if lam_bar <= 0:
        raise ModelError("lam_bar must be > 0")
    sigma = float(p["sigma"])
    if sigma <= 0:
        raise ModelError(f"sigma must be > 0, got {sigma}")
    lam, lam_sup, lam_inf = _intensity(p["intensity"], float(p["lam0"]), float(p["lam1"]))
    zs = np.linspace(-50.0, 50.0, 20001)
    sampled = lam(zs)
    if lam_sup > lam_bar * (1 + 1e-12) or sampled.max() > lam_bar * (1 + 1e-12):
        raise ModelError(
            f"assumption A2 violated: intensity reaches {max(lam_sup, sampled.max()):.6g} "
            f"> lam_bar = {lam_bar:.6g}, so the density would exceed 1")
    if lam_inf < 0 or sampled.min() < 0:
        raise ModelError("intensity must be non-negative")

    if name in ("cox", "compound_cox"):
        mu = float(p["mu"])
        drift = lambda t, z, l: np.full(z.shape, mu)
        lip_a = 0.0
    else:
        kappa, theta = float(p["kappa"]), float(p["theta"])
        if kappa <= 0:
            raise ModelError(f"kappa must be > 0, got {kappa}")
        drift = lambda t, z, l: kappa * (theta - z)
        lip_a = kappa

    dispersion = lambda t, z, l: np.full((z.shape[0], 1, 1), sigma)

    if name == "compound_cox":
        sizes, probs = _jump_nodes(p)
        nodes = sizes
        weights = lam_bar * probs
        gz = np.zeros((sizes.size, 1))
        gl = sizes
    elif name == "joint_jump":
        eta, pj = float(p["eta"]), float(p["p_joint"])
        if not 0 < pj < 1:
            raise ModelError("p_joint must lie in (0, 1)")
        # mark 0: loss with excitation of Z, mark 1: plain loss
        nodes = np.array([0.0, 1.0])
        weights = lam_bar * np.array([pj, 1.0 - pj])
        gz = np.array([[eta], [0.0]])
        gl = np.array([1.0, 1.0])
    else:
        nodes = np.array([1.0])
        weights = np.array([lam_bar])
        gz = np.zeros((1, 1))
        gl = np.array([1.0])
    marks = MarkMeasure(nodes=nodes, weights=weights)
    K = marks.size

    jump_z = lambda t, z, l: np.broadcast_to(gz, (z.shape[0], K, 1)).copy()
    jump_l = lambda t, z, l: np.broadcast_to(gl, (z.shape[0], K)).copy()
    nu_density = lambda t, z, l: np.repeat((lam(z[:, 0]) / lam_bar)[:, None], K, axis=1)

    c0, f0 = float(p["c0"]), float(p["f0"])
    discount = lambda t, z, l: np.full(l.shape, c0)
    running = lambda t, z, l: np.full(l.shape, f0)
    g, sup_g, lip_g = _payoff(p["payoff"], float(p["g0"]), float(p["K"]))

    rho = np.abs(gz).sum(axis=1) + np.abs(gl)
    # nu Lipschitz constant: sup |lambda'| / lam_bar, bounded by |lam1| for all families
    rho = np.maximum(rho, abs(float(p["lam1"])) / lam_bar) + 1e-12
    bounds = DeclaredBounds(sup_b=sigma, sup_c=abs(c0), sup_f=abs(f0), sup_g=sup_g,
                            lip_a=lip_a, lip_b=0.0, lip_f=0.0, lip_g=lip_g)
    return ModelSpec(
        name=name, dim_z=1, drift=drift, dispersion=dispersion,
        jump_z=jump_z, jump_l=jump_l, nu_density=nu_density, mark_measure=marks,
        discount=discount, running_cost=running, terminal=g,
        declared_bounds=bounds, declared_rho=rho, time_homogeneous=True,
        params=p,
    )
