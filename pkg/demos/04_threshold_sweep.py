"""Total power vs SINR threshold, plus the zero-threshold straight-line
limit. Takes several minutes.

Run:  python3 demos/04_threshold_sweep.py
"""

from dataclasses import replace

from skyplan import sca
from skyplan.scenario import default_scenarios

s = default_scenarios()[0]
gammas = [0.5, 1.0, 2.0]
print(f"sweeping gamma over {gammas} on {s.name!r}...\n")
rows = sca.gamma_sweep(s, gammas)

print("gamma   total power    converged   iterations   chord deviation")
for r in rows:
    dev = sca.max_chord_deviation(r.trace, s) if r.trace else float("nan")
    print(f"{r.gamma:5.2f}   {r.total_power:9.3f} W   {str(r.converged):<9s}"
          f"   {r.iterations:^10d}   {dev:9.1f} m")

trace0, _ = sca.run(replace(s, gamma_min=0.0))
dev0 = sca.max_chord_deviation(trace0, s)
print(f"\nno-threshold run: {trace0.power_sum:.3f} W, "
      f"chord deviation {dev0:.1f} m (straight-line limit)")
