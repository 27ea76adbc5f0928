"""Population dynamics for the cavity fixed point of an LDGM code.

Starting from uniform messages, from frozen messages and from a uniform
spread, the population is iterated while E|theta| and the functional B
are tracked.  For k = 3 with all degrees 3 every start flows to uniform
messages, where B = ln 2; the predicted mutual information is then
ln 2 - h(eta), the capacity of the channel.
"""
import numpy as np

from ldgm_mi import DegreeDistribution, Population, b_functional, code_weight_family, pd_step

k, eta = 3, 0.1
D = DegreeDistribution.point(3)
fam = code_weight_family(k, eta)
starts = {"uniform": Population.delta_zero(4000), "frozen": Population.frozen(4000),
          "spread": Population.uniform_spread(4000, 1)}

print(f"{'start':>8} {'step':>5} {'E|theta|':>9} {'B':>8}")
for name, pop in starts.items():
    for it in range(1, 31):
        pop = pd_step(pop, k, D, eta, seed=it)
        if it in (1, 3, 10, 30):
            b = b_functional(D, fam, pop, 20_000, seed=it)
            print(f"{name:>8} {it:5d} {np.abs(pop.thetas()).mean():9.4f} {b.value:8.5f}")
print(f"ln 2 = {np.log(2):.5f}")
