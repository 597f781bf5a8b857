"""Walk through the building blocks: a scenario, the SINR model, and the
propulsion-power model.

Run:  python3 demos/01_scenario_and_model.py
"""

import numpy as np

from skyplan import model
from skyplan.scenario import default_scenarios, nondimensionalize

s = default_scenarios()[0]
print(f"scenario {s.name!r}: {s.J} ground stations, N = {s.N} slots of "
      f"{s.timing.slot_T_c} s, v_max = {s.vehicle.v_max} m/s")
print(f"start ({s.q_start[0]:.0f}, {s.q_start[1]:.0f}) -> "
      f"goal ({s.q_final[0]:.0f}, {s.q_final[1]:.0f}), "
      f"SINR threshold {s.gamma_min}")

# SINR along the straight chord, served by the nearest station
print("\nSINR along the straight start->goal line (serving = nearest station):")
for t in np.linspace(0.0, 1.0, 6):
    q = s.q_start + t * (s.q_final - s.q_start)
    dists = np.linalg.norm(s.stations_xy - q, axis=1)
    j = int(np.argmin(dists))
    bd = model.sinr(q, j, s.stations_xy, s.h_linear, s.vehicle.altitude_H)
    print(f"  t={t:.1f}  q=({q[0]:7.1f},{q[1]:7.1f})  station {j + 1}  "
          f"SINR={bd.sinr:8.2f}  (signal {bd.signal:9.1f}, "
          f"interference {bd.interference:7.1f})")

# propulsion power vs speed: the bowl shape that drives the optimizer
print("\npropulsion power vs speed (straight flight, no acceleration):")
for speed in (2.0, 5.0, 8.0, 11.0, 14.0):
    p = model.power_slack(np.array([speed, 0.0]), np.zeros(2), speed,
                          s.vehicle.c1, s.vehicle.c2, s.vehicle.gravity_g)
    print(f"  |v| = {speed:5.1f} m/s   P = {p.total:7.2f} W   "
          f"(speed^3 term {p.kinetic_term:6.2f}, 1/speed term {p.parasitic_term:6.2f})")

# nondimensionalization leaves SINR and power unchanged
ss = nondimensionalize(s)
q = np.array([50.0, 200.0])
phys = model.sinr(q, 0, s.stations_xy, s.h_linear, s.vehicle.altitude_H).sinr
scal = model.sinr(q / s.length_scale, 0, ss.stations_xy, ss.h_lin, ss.altitude_H).sinr
print(f"\nscaling check: SINR physical {phys:.6f} vs scaled {scal:.6f}")
