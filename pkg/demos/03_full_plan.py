"""Full pipeline on the first bundled map: feasibility, seed, iterative
convex refinement, rounding, validation. Takes a couple of minutes.

Run:  python3 demos/03_full_plan.py
"""

import numpy as np

from skyplan import sca
from skyplan.scenario import default_scenarios

s = default_scenarios()[0]
print(f"planning on {s.name!r} (gamma_min = {s.gamma_min})...\n")

trace, reports = sca.run(s)

print("iter  surrogate obj   exact obj   binary gap   solver      wall")
for r in reports:
    print(f"{r.iteration:4d}  {r.surrogate_objective:13.4f}  {r.exact_penalized_objective:10.4f}"
          f"  {r.max_binary_gap:10.2e}   {r.solver_status:<14s} {r.wall_time:5.1f}s")

print(f"\ntotal propulsion power {trace.power_sum:.2f} W "
      f"({trace.energy:.0f} J over {s.timing.total_time_T:.0f} s)")
print(f"minimum serving SINR {trace.min_serving_sinr:.4f} "
      f"(threshold {s.gamma_min}, violated={trace.connectivity_violated})")
print(f"speed margin {trace.speed_margin:.2f} m/s, "
      f"acceleration margin {trace.accel_margin:.2f} m/s^2")

print("\n slot   position (m)        speed   serving   SINR    power")
for sl in trace.slots:
    sp = np.linalg.norm(sl.velocity)
    print(f"  {sl.n:3d}  ({sl.position[0]:7.1f},{sl.position[1]:7.1f})  "
          f"{sp:6.2f}     GBS {sl.serving_gbs}   {sl.true_sinr:5.2f}  {sl.slot_power:7.2f} W")
