"""
Monte Carlo against the PIDE
============================

Probe values of the grid solution are compared with both simulation routes;
the tolerance is three standard errors plus a budget derived from the
interior residual of the grid solution.
"""

from markov_pide import GridSpec, build_catalog_model, compare_mc_pide, solve_pide

model = build_catalog_model("ou_modulated_cox", {"intensity": "bump", "lam0": 1.0,
                                                 "lam1": 1.0, "lam_bar": 2.0})
grid = GridSpec.for_model(model, 1.0, 0.005, [-3.0], [3.0], 0.05, 0.0, 5.0, 1.0, 10)
sol = solve_pide(model, grid)
probes = [(0.0, [0.0], 2.0), (0.0, [1.0], 4.0), (0.5, [-0.5], 1.0)]
report = compare_mc_pide(model, sol, probes, n_paths=20_000, seed=3, dt_max=0.005)
print(report.summary())
