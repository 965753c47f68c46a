"""
Three controllers on the third-order canal
==========================================

Five alternating pools start away from their set-points; later an off-take
opens in the most downstream pool.  The sweep controller (designed on the
first-order model, with estimation and filtered flows) is compared with a
full-state LQ controller and with proportional control.
"""

from dataclasses import replace

from canal_lq.harness import (best_p, compare_controllers, run_scenario, setpoint_scenario,
                              step_offtake_scenario, sweep_network_size)

base = step_offtake_scenario()

for ctl in ("structured", "lq3"):
    c = run_scenario(replace(base, controller=ctl)).cost()
    print(f"{ctl:10s} total {c.total:9.1f}  levels {c.level:9.1f}  release {c.input:8.1f}")

factor, trace = best_p(base)
print(f"{'p':10s} total {trace.cost().total:9.1f}  (best gain factor {factor})")

# The full-state controller sees the wave states and acts hardest early on.
tr_lq = run_scenario(replace(base, controller="lq3"))
tr_st = run_scenario(base)
print("peak |u| lq3 vs structured:", abs(tr_lq.u).max().round(2), abs(tr_st.u).max().round(2))

# Moving water from the reservoir end down the string.
for n in (3, 5):
    print(f"set-point change, N={n}:", {k: round(v, 2) for k, v in
                                         compare_controllers(setpoint_scenario(n)).items()})

# Larger networks barely change the cost of rejecting the same off-take.
for row in sweep_network_size(sizes=(3, 5)):
    print(row)
