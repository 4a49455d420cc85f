"""
Switch groups and one stage of power flow
=========================================

A distribution feeder must stay radial.  The switchable lines of the
54-bus synthetic system fall into five groups; inside a group at most one
line may be closed, so each group of size k offers k + 1 choices.
"""

import numpy as np

from psps_lab.synthetic import synth54
from psps_lab.topology import SwitchConfig, count_topologies, decompose_groups
from psps_lab.powerflow import solve_pf

net = synth54()
groups = decompose_groups(net)
for g in groups:
    print("group", g.lines, "->", g.n_configs, "choices")
print("radial topologies:", count_topologies(groups))

###############################################################################
# Close one line per group and solve the hour-17 LP (the evening peak).
# Flows are in per unit; ``shed_p`` is unserved active demand.

closed = {3, 5, 37, 47, 52}
cfg = SwitchConfig.from_closed(net.switchable_ids, closed)
sol = solve_pf(net, cfg, hour=17)
print(f"objective {sol.objective:,.1f}  energy {sol.energy_cost:,.1f}  shed {sol.shed_p:.3f}")

###############################################################################
# Flow loading of the wildfire-area lines.  These fractions are what the
# failure model compares against its threshold.

wf = np.flatnonzero(net.wildfire_mask)
frac = np.abs(sol.f_p[wf]) / net.f_max[wf]
for i, f in zip(wf, frac):
    print(f"line {net.lines[i].id:>3}: {f:5.2f} of capacity")

###############################################################################
# A failed line is removed by its availability flag.  Whatever it carried has
# to find another path or be shed.

av = np.ones(net.n_line, bool)
av[wf[np.argmax(frac)]] = False
after = solve_pf(net, cfg, av, hour=17)
print(f"after losing line {net.lines[wf[np.argmax(frac)]].id}: objective {after.objective:,.1f}, "
      f"shed {after.shed_p:.3f}")
