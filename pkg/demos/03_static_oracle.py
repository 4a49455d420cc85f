"""
Ranking every static topology
=============================

The 6-bus toy feeder has only 12 radial topologies, so each can be held for
a whole day and scored by Monte Carlo.  All topologies share the same
failure draws, which makes the ranking a paired comparison.
"""

from psps_lab.baselines import enumerate_static_oracle
from psps_lab.scenario import load_scenario

sc = load_scenario("toy6")
rows = enumerate_static_oracle(sc, episodes=100, seed=0)

print(f"{'closed':<10} {'mean cost':>10} {'std':>8} {'failures':>9}")
for r in rows:
    print(f"{str(r.closed):<10} {r.mean_cost:>10,.1f} {r.std_cost:>8,.1f} {r.mean_failures:>9.2f}")

###############################################################################
# Op. cost includes switching away from the initial topology at the first
# hour.  The cheapest row is the target a learned policy has to match.

best = rows[0]
print("best static topology:", best.closed, f"({best.mean_switch_cost:,.0f} of switching)")
