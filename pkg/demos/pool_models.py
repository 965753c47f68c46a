"""
Pool models and the delay fit
=============================

A third-order pool, its slow first-order approximation, and how the
approximation's delays are chosen.
"""

import numpy as np

from canal_lq.filters import design_butterworth, filter_sequence
from canal_lq.ident import identify, make_test_signal, pool_response
from canal_lq.plant import FirstOrderPoolParams, dc_slope, load_pool_table

table = load_pool_table()
p1, p2 = table[1, 3], table[2, 3]

# An inflow impulse reaches the downstream level after the transport delay.
impulse = np.zeros(30)
impulse[0] = 1.0
y = pool_response(p1, inflow=impulse)
print("impulse response, first samples:", np.round(y[:8], 4))

# Under constant inflow the level ramps; the slope follows from the
# coefficients alone.
for name, p in (("model 1", p1), ("model 2", p2)):
    ramp = pool_response(p, inflow=np.ones(3000))
    print(f"{name}: simulated slope {ramp[-1] - ramp[-2]:.5f}, closed form {dc_slope(p):.5f}")

# The low-pass filter removes the wave resonance.  Its magnitude at a few
# frequencies:
filt = design_butterworth()
for w in (1e-3, 3e-3, 1e-2, 3e-2):
    print(f"|H| at {w:.0e} rad/s: {20 * np.log10(abs(filt.response(w))):7.2f} dB")

# Fit the filter delay on the outflow response, then each pool's transport
# delay on the inflow response.
res = identify()
print("fitted tau_bar:", res["tau_bar"], " pool delays:", res["tau"])

# The objective around the optimum for pool model 2 is shallow.
errs = res["errors"][2]
best = res["tau"][2]
for k in range(best - 2, best + 3):
    print(f"  tau={k:2d}  objective {errs[k]:.3e}")

# Compare the first-order model, with the fitted delays, against the
# filtered third-order outflow response.
sig = make_test_signal(100, 300, 400, 600)
ref = pool_response(p1, outflow=filter_sequence(filt, sig))
fo = table[1, 1]
approx = pool_response(FirstOrderPoolParams(fo.b, fo.c, res["tau"][1], res["tau_bar"]), outflow=sig)
print(f"outflow response: peak {np.abs(ref).max():.3f}, "
      f"RMS model error {np.sqrt(np.mean((ref - approx) ** 2)):.4f}")
