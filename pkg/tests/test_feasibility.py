import numpy as np
import pytest

from skyplan import feasibility, model
from skyplan.scenario import nondimensionalize
from tests.conftest import make_scenario


def test_zero_threshold_straight_line():
    s = make_scenario([(50.0, 0.0)], gamma_min=0.0, T=20.0, Tc=5.0,
                      q_final=(100.0, 0.0))
    for check in (lambda: feasibility.circle_graph_check(s),
                  lambda: feasibility.grid_oracle_check(s, 2.0)):
        cert = check()
        assert cert.feasible
        assert cert.waypoints.shape == (5, 2)
        assert np.allclose(cert.waypoints[0], (0.0, 0.0))
        assert np.allclose(cert.waypoints[-1], (100.0, 0.0))
        assert len(cert.association.serving) == 4


def test_kinematically_unreachable_goal():
    # N*d0 = 4 * 75 = 300 < 1000
    s = make_scenario([(50.0, 0.0)], gamma_min=0.0, T=20.0, Tc=5.0,
                      q_final=(1000.0, 0.0))
    assert not feasibility.circle_graph_check(s).feasible
    assert not feasibility.grid_oracle_check(s, 5.0).feasible


def test_no_station_meets_threshold():
    # h = 1e4 (40 dB): overhead SINR = 1e4/2500 = 4 < gamma = 5
    s = make_scenario([(20.0, 0.0)], h_db=40.0, gamma_min=5.0,
                      T=20.0, Tc=5.0, q_final=(40.0, 0.0))
    cert = feasibility.circle_graph_check(s)
    assert not cert.feasible
    assert "overhead" in cert.message
    assert not feasibility.grid_oracle_check(s, 2.0).feasible


def test_single_station_agreement_feasible():
    # 45 dB station: coverage radius sqrt(10^4.5/2 - 2500) ~= 117 m
    s = make_scenario([(40.0, 0.0)], h_db=45.0, gamma_min=2.0, v_max=10.0,
                      T=25.0, Tc=5.0, q_final=(80.0, 0.0))
    circle = feasibility.circle_graph_check(s, 0.0)
    oracle = feasibility.grid_oracle_check(s, 2.0)
    assert circle.feasible and oracle.feasible
    assert len(circle.association.serving) == s.N
    # single station: every slot must be served by it
    assert set(circle.association.serving) == {1}
    assert circle.min_waypoint_sinr >= s.gamma_min - 1e-9


def test_oracle_certificate_waypoints_are_valid(tiny_scenario):
    s = tiny_scenario
    cert = feasibility.grid_oracle_check(s, 2.0)
    assert cert.feasible
    w = cert.waypoints
    d0 = s.vehicle.v_max * s.timing.slot_T_c
    gaps = np.linalg.norm(np.diff(w, axis=0), axis=1)
    assert np.all(gaps <= d0 + 1e-9)
    serving = cert.association.zero_based()
    for n in range(1, s.N + 1):
        val = model.sinr(w[n], serving[n - 1], s.stations_xy, s.h_linear,
                         s.vehicle.altitude_H).sinr
        assert val >= s.gamma_min - 1e-9
    assert cert.min_waypoint_sinr >= s.gamma_min - 1e-9


def test_oracle_cell_budget():
    s = make_scenario([(50.0, 0.0)], q_final=(100.0, 0.0), T=20.0, Tc=5.0)
    with pytest.raises(feasibility.FeasibilityResourceError):
        feasibility.grid_oracle_check(s, 0.01, cell_budget=1000)
    with pytest.raises(ValueError):
        feasibility.grid_oracle_check(s, 0.0)


def test_erosion_margin_flag(tiny_scenario):
    base = feasibility.grid_oracle_check(tiny_scenario, 2.0)
    eroded = feasibility.grid_oracle_check(tiny_scenario, 2.0, erode_cells=1)
    assert base.feasible and eroded.feasible  # fixture has margin


def test_initial_trajectory_consistency(tiny_scenario):
    s = tiny_scenario
    cert = feasibility.grid_oracle_check(s, 2.0)
    it = feasibility.initial_trajectory(cert, s)
    ss = nondimensionalize(s)
    N = s.N
    Tc = s.timing.slot_T_c
    # trapezoidal kinematics hold exactly
    for n in range(1, N + 1):
        assert np.allclose(it.Q[n], it.Q[n - 1] + Tc * it.v[n - 1]
                           + 0.5 * Tc**2 * it.a[n - 1], atol=1e-10)
        assert np.allclose(it.v[n], it.v[n - 1] + Tc * it.a[n - 1], atol=1e-10)
    assert np.allclose(it.Q[0], ss.q_start)
    assert np.allclose(it.Q[N], ss.q_final, atol=1e-9)
    assert np.allclose(it.v[0], ss.v0)
    # caps with interior margin; one-hot alpha; true squared distances
    assert np.linalg.norm(it.v, axis=1).max() <= ss.v_max
    assert np.linalg.norm(it.a, axis=1).max() <= ss.a_max
    assert np.all(np.sort(it.alpha, axis=1)[:, -1] == 1.0)
    assert np.all(it.alpha.sum(axis=1) == 1.0)
    for n in range(1, N + 1):
        for j in range(s.J):
            assert it.rho[n - 1, j] == pytest.approx(
                model.squared_distance(it.Q[n], ss.stations_xy[j], ss.altitude_H),
                rel=1e-12)
    # seed meets the threshold with margin at every connectivity slot
    serving = np.argmax(it.alpha, axis=1)
    for n in range(1, N + 1):
        val = model.sinr(it.Q[n], int(serving[n - 1]), ss.stations_xy, ss.h_lin,
                         ss.altitude_H).sinr
        assert val >= s.gamma_min * 1.05 - 1e-9


def test_initial_trajectory_rejects_infeasible_certificate(tiny_scenario):
    cert = feasibility.FeasibilityCertificate(
        feasible=False, association=None, waypoints=None, method="circle-graph")
    with pytest.raises(feasibility.InitializationError):
        feasibility.initial_trajectory(cert, tiny_scenario)


def test_bundled_maps_are_feasible_with_margin():
    from skyplan.scenario import default_scenarios
    for s in default_scenarios():
        oracle = feasibility.grid_oracle_check(s, 2.0, cell_budget=5_000_000)
        assert oracle.feasible, s.name
        margin = feasibility.grid_oracle_check(s, 2.0, cell_budget=5_000_000,
                                               erode_cells=1)
        assert margin.feasible, s.name
