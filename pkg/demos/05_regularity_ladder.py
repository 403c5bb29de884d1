"""
Lipschitz in l, smooth in z
===========================

With a kinked payoff g = |l - K| the solution keeps the kink in l while
second differences in z settle down under refinement.
"""

import numpy as np

from markov_pide import GridSpec, build_catalog_model, regularity_probe, solve_pide

model = build_catalog_model("cox", {"intensity": "bump", "lam0": 1.0, "lam1": 1.0,
                                    "lam_bar": 2.0, "payoff": "abs_l", "K": 5.0})
g0 = GridSpec.for_model(model, 1.0, 0.01, [-4.0], [4.0], 0.1, 0.0, 8.0, 1.0, 12)
ladder = [g0.refine(), g0.refine().refine()]
rep = regularity_probe(solve_pide(model, g0, compute_residual=False), ladder, model,
                       z_probes=[[-0.5], [0.0], [1.0]], l_probes=[3.0, 4.0, 5.0])

print("l-Lipschitz estimate per level:", np.round(rep.lipschitz_l, 4))
print("z second-difference Cauchy gaps:", rep.d2z_cauchy)
print("shrink per refinement:", rep.d2z_shrink)
print("growth of max |second l-difference|:", rep.d2l_growth)
