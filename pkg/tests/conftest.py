import numpy as np
import pytest

from skyplan.scenario import GroundStation, Scenario, Timing, VehicleParams


def make_scenario(stations_xy, *, h_db=80.0, v_max=15.0, a_max=5.0, v0=(2.0, 2.0),
                  altitude=50.0, T=50.0, Tc=5.0, q_start=(0.0, 0.0),
                  q_final=(100.0, 400.0), gamma_min=2.0, lam=1e5, name=""):
    stations = tuple(
        GroundStation(id=i + 1, position=p, reference_snr_db=h_db)
        for i, p in enumerate(stations_xy))
    return Scenario(
        stations=stations,
        vehicle=VehicleParams(c1=0.002, c2=80.0, gravity_g=10.0, altitude_H=altitude,
                              v_max=v_max, a_max=a_max, v0=v0),
        timing=Timing(total_time_T=T, slot_T_c=Tc),
        q_start=q_start, q_final=q_final,
        gamma_min=gamma_min, penalty_lambda=lam, name=name)


@pytest.fixture
def tiny_scenario():
    """Three-slot, two-station scenario that the full pipeline solves in a
    few seconds; verified feasible by the grid oracle."""
    return make_scenario([(30.0, 10.0), (90.0, -10.0)],
                         T=15.0, Tc=5.0, q_final=(90.0, 0.0), name="tiny")


def fd_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g
