"""How far the layered graph is from the configuration model.

Both graphs are grown from shared randomness; the number of checks that
differ, C_F, is averaged over repetitions for growing n.  A flat profile
means the approximation error per graph does not grow with the size.
"""
from ldgm_mi import DegreeDistribution, coupling_scaling_stat

D = DegreeDistribution.point(3)
res = coupling_scaling_stat([100, 200, 400, 800], reps=60, alpha=0.1, beta=0.1, D=D, k=3,
                            seed=2024)
print(f"{'n':>5} {'mean C_F':>9} {'stderr':>7} {'truncations':>12} {'redraws':>8}")
for row in res.rows:
    print(f"{row['n']:5d} {row['mean_CF']:9.3f} {row['stderr']:7.3f} "
          f"{row['truncations']:12.2f} {row['exhausted']:8d}")
print(f"slope {res.slope:.2e} per variable, 95% CI ({res.ci[0]:.2e}, {res.ci[1]:.2e})")
