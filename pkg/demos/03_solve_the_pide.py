"""
Solving the backward PIDE on a grid
===================================

Fixed-point iteration over frozen-source problems, compared with the
one-sweep IMEX scheme and with the closed form for a constant intensity.
"""

import numpy as np

from markov_pide import GridSpec, build_catalog_model, solve_pide

# constant intensity 2 and g = l: v(t, z, l) = l + 2 (T - t)
model = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0, "payoff": "l"})
grid = GridSpec.for_model(model, T=1.0, dt=0.01, z_min=[-2.0], z_max=[2.0], dz=0.05,
                          l_lo=0.0, l_hi=6.0, dl=1.0, m_jumps=12)
fp = solve_pide(model, grid, mode="fixed_point")
print("iterations:", fp.iterations, "last deltas:", np.round(fp.sup_norm_deltas[-3:], 12))
print("v(0, 0, 5) =", fp.at(0.0, [0.0], 5.0), "(exact 7)")

# a state-dependent intensity: the two time discretizations differ by O(dt)
bump = build_catalog_model("cox", {"intensity": "bump", "lam0": 1.0, "lam1": 1.0,
                                   "lam_bar": 2.0, "payoff": "abs_l", "K": 3.0})
for dt in (0.02, 0.01):
    g = GridSpec.for_model(bump, 1.0, dt, [-3.0], [3.0], 0.05, 0.0, 6.0, 1.0, 10)
    a = solve_pide(bump, g, "fixed_point", compute_residual=False)
    b = solve_pide(bump, g, "imex", compute_residual=False)
    print(f"dt {dt}: max |FP - IMEX| at t=0, l<=6: "
          f"{np.abs(a.values[0, ..., :7] - b.values[0, ..., :7]).max():.2e}")
