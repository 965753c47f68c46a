"""
Level deviation against release effort
======================================

Varying the release weight of the sweep controller, and the input or
input-rate weights of the full-state controller, traces out how much level
deviation each buys with how much gate activity.
"""

from canal_lq.harness import sweep_tradeoff

rows = sweep_tradeoff(r_structured=(0.1, 0.3, 1.0, 3.0), r_lq3=(0.03, 0.3, 3.0),
                      rho_lq3=(1.0, 100.0))
print(f"{'controller':10s} {'weight':>7s} {'value':>7s} {'sum y^2':>10s} {'sum u^2':>10s} "
      f"{'sum u_N^2':>10s} {'sum du^2':>9s}")
for r in rows:
    print(f"{r['controller']:10s} {r['parameter']:>7s} {r['value']:7.2f} {r['sum_y2']:10.1f} "
          f"{r['sum_u2']:10.0f} {r['sum_uN2']:10.0f} {r['sum_du2']:9.2f}")
