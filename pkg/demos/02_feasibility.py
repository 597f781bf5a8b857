"""Connectivity feasibility: the analytic disk-chain test vs the grid oracle.

Run:  python3 demos/02_feasibility.py
"""

import numpy as np

from skyplan import feasibility
from skyplan.scenario import default_scenarios

for s in default_scenarios():
    d0 = s.vehicle.v_max * s.timing.slot_T_c
    print(f"== {s.name}: per-slot displacement budget d0 = {d0:.0f} m")

    circle = feasibility.circle_graph_check(s, interference_bound=0.0)
    print(f"   disk-chain test: feasible={circle.feasible}", end="")
    if circle.feasible:
        print(f", association {list(circle.association.serving)}, "
              f"min waypoint SINR {circle.min_waypoint_sinr:.2f}")
    else:
        print(f" ({circle.message})")

    oracle = feasibility.grid_oracle_check(s, grid_step=2.0, cell_budget=5_000_000)
    print(f"   grid oracle:     feasible={oracle.feasible}, "
          f"max interference seen {oracle.max_observed_interference:.1f}")

    if oracle.feasible:
        # seed from an eroded-oracle certificate, as the planner does: its
        # waypoints cross coverage gaps where they are narrow, with margin
        seed_cert = feasibility.grid_oracle_check(
            s, grid_step=2.0, cell_budget=5_000_000, erode_cells=2)
        if not seed_cert.feasible:
            seed_cert = oracle
        it = feasibility.initial_trajectory(seed_cert, s)
        L = s.length_scale
        speeds = np.linalg.norm(it.v, axis=1) * L
        print(f"   seed trajectory: speeds {speeds.min():.1f}..{speeds.max():.1f} m/s "
              f"(cap {s.vehicle.v_max}), endpoint error "
              f"{np.linalg.norm(it.Q[-1] * L - s.q_final):.2e} m")
    print()
