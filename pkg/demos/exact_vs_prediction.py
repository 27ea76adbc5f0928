"""Exact mutual information of small LDGM codes next to the variational prediction.

For k = 3 and every variable of degree 3 this prints, for a few noise
levels, the mutual information per variable averaged over random graphs
(computed exactly by a Walsh-Hadamard transform) and the prediction
obtained by population dynamics.  The gap shrinks as n grows.
"""
import numpy as np

from ldgm_mi import DegreeDistribution, SolverSettings, code_weight_family, conditional_entropy_mc
from ldgm_mi.ldgm import binary_entropy, mi_predictions_codes

k = 3
D = DegreeDistribution.point(3)
settings = SolverSettings(N=2000, iterations=60, mc_samples=40_000, seed=1)

print(f"{'eta':>5} {'ln2-h':>8} {'n=6':>8} {'n=12':>8} {'predicted':>10}")
for eta in (0.1, 0.2, 0.3, 0.4):
    fam = code_weight_family(k, eta)
    exact = []
    for n in (6, 12):
        h = conditional_entropy_mc(n, D, k, fam, samples=100, seed=7, exact=True,
                                   inner="channel")
        exact.append(np.log(2) - h.value)
    pred = mi_predictions_codes(k, D, eta, settings)["full"]
    print(f"{eta:5.2f} {np.log(2) - binary_entropy(eta):8.5f} "
          f"{exact[0]:8.5f} {exact[1]:8.5f} {pred.value:10.5f}")
