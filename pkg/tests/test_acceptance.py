"""Acceptance criteria for the full pipeline.

Each test is numbered after the criterion it implements; stated tolerances
and runtime budgets are asserted directly.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from skyplan import cli, feasibility, model, sca, surrogate
from skyplan.scenario import default_scenarios, nondimensionalize
from skyplan.solver import SmoothConvexProblem, derivative_check, solve
from tests.conftest import fd_gradient, make_scenario


# ---------------------------------------------------------------------------
# 1. Derivative correctness: analytic gradients/Hessians vs central finite
#    differences, <= 1e-5 relative, >= 100 random interior points, < 10 s.
# ---------------------------------------------------------------------------

def test_criterion_1_derivative_correctness():
    t0 = time.monotonic()
    rng = np.random.RandomState(101)
    points = 0

    # propulsion power over (v, a, theta)
    c1, c2, g = 0.2, 0.8, 1e-3
    for _ in range(50):
        z0 = np.r_[rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2),
                   rng.uniform(0.1, 2.0)]
        grad, hess = model.power_gradient_hessian(z0[0:2], z0[2:4], z0[4],
                                                  c1, c2, g, 1e-8)
        fg = fd_gradient(lambda z: model.smoothed_power_value(
            z[0:2], z[2:4], z[4], c1, c2, g, 1e-8), z0)
        scale = max(1.0, float(np.max(np.abs(fg))))
        assert np.max(np.abs(grad - fg)) <= 1e-5 * scale
        fh = np.array([fd_gradient(lambda z: model.power_gradient_hessian(
            z[0:2], z[2:4], z[4], c1, c2, g, 1e-8)[0][i], z0, 1e-5)
            for i in range(5)])
        assert np.max(np.abs(hess - fh)) <= 1e-5 * max(1.0, np.max(np.abs(fh)))
        points += 1

    # interference fraction over the interferer distances
    for _ in range(50):
        J = rng.randint(2, 9)
        rho = rng.uniform(0.5, 5.0, J)
        h = rng.uniform(0.5, 5.0, J)
        j = rng.randint(0, J)
        others = [k for k in range(J) if k != j]
        grad, hess = model.f_j_gradient_hessian(rho, j, h)

        def fval(r):
            rr = rho.copy()
            rr[others] = r
            return model.f_j(rr, j, h)

        def fgrad(r, i):
            rr = rho.copy()
            rr[others] = r
            return model.f_j_gradient_hessian(rr, j, h)[0][i]

        fg = fd_gradient(fval, rho[others])
        assert np.max(np.abs(grad - fg)) <= 1e-5 * max(1.0, np.max(np.abs(fg)))
        fh = np.array([fd_gradient(lambda r: fgrad(r, i), rho[others], 1e-5)
                       for i in range(len(others))])
        assert np.max(np.abs(hess - fh)) <= 1e-5 * max(1.0, np.max(np.abs(fh)))
        points += 1

    # all assembled surrogate callbacks (objective, Jacobian, weighted
    # constraint Hessian) at random strictly interior points
    s = make_scenario([(30.0, 10.0), (90.0, -10.0)], T=15.0, Tc=5.0,
                      q_final=(90.0, 0.0))
    cert = feasibility.grid_oracle_check(s, 2.0)
    it = feasibility.initial_trajectory(cert, s)
    asm = surrogate.assemble(it, nondimensionalize(s))
    x0 = asm.warm_start
    for k in range(5):
        x = x0 if k == 0 else _random_interior(asm, x0, rng)
        rep = derivative_check(asm.problem, x)
        assert rep["max"] <= 1e-5, rep
        points += 1

    assert points >= 100
    assert time.monotonic() - t0 < 10.0


def _random_interior(asm, x0, rng):
    """Small random perturbation of the warm start kept strictly interior."""
    for _ in range(50):
        x = x0 + rng.uniform(-1e-4, 1e-4, x0.size)
        if np.max(asm.problem.eval_ineq(x)) < -1e-10:
            return x
    return x0


# ---------------------------------------------------------------------------
# 2. Concavity of the interference fraction: max eigenvalue of its Hessian
#    <= 1e-8 * ||H|| over 1000 random draws, J in 2..8, < 10 s.
# ---------------------------------------------------------------------------

def test_criterion_2_concavity():
    t0 = time.monotonic()
    rng = np.random.RandomState(202)
    for _ in range(1000):
        J = rng.randint(2, 9)
        rho = rng.uniform(0.05, 20.0, J)
        h = rng.uniform(0.05, 20.0, J)
        j = rng.randint(0, J)
        _, hess = model.f_j_gradient_hessian(rho, j, h)
        top = np.linalg.eigvalsh(hess)[-1]
        assert top <= 1e-8 * max(np.linalg.norm(hess, 2), 1e-300)
    assert time.monotonic() - t0 < 10.0


# ---------------------------------------------------------------------------
# 3. Surrogate soundness: tangency to 1e-9; surrogate feasibility implies the
#    original constraints; Taylor lower bound slack equals the squared
#    displacement. 100 random draws each, < 10 s.
# ---------------------------------------------------------------------------

def test_criterion_3_surrogate_soundness():
    t0 = time.monotonic()
    rng = np.random.RandomState(303)

    for _ in range(100):
        # tangency at the expansion point
        vb = rng.uniform(-3, 3, 2)
        assert abs(surrogate.theta_speed_constraint(np.linalg.norm(vb), vb, vb)) <= 1e-9
        ab, rb = rng.rand(), rng.uniform(0.5, 5.0)
        assert abs(surrogate.bilinear_lower_bound(ab, rb, ab, rb)
                   - (ab**2 + rb**2)) <= 1e-9
        al = rng.rand(3, 2)
        lam = rng.uniform(1.0, 1e5)
        assert abs(surrogate.penalty_surrogate(al, al, lam)
                   - surrogate.exact_penalty(al, lam)) <= 1e-9 * max(1.0, lam)
        Qb = rng.uniform(-5, 5, 2)
        st = rng.uniform(-5, 5, 2)
        H = rng.uniform(0.1, 2.0)
        assert abs(surrogate.rho_affine_value(Qb, Qb, st, H)
                   - model.squared_distance(Qb, st, H)) <= 1e-9

    # speed-slack surrogate feasibility implies ||v||^2 >= theta^2
    for _ in range(100):
        vb = rng.uniform(-3, 3, 2)
        v = rng.uniform(-3, 3, 2)
        th = rng.uniform(0.01, 4.0)
        if surrogate.theta_speed_constraint(th, v, vb) <= 0:
            assert float(v @ v) >= th * th - 1e-12

    # SINR surrogate feasibility implies the original SINR constraint
    checked = 0
    while checked < 100:
        J = rng.randint(2, 6)
        h = rng.uniform(0.5, 5.0, J)
        gmin = rng.uniform(0.1, 3.0)
        ab_v = rng.rand(J)
        rb_v = rng.uniform(0.5, 5.0, J)
        a_v = np.clip(ab_v + rng.uniform(-0.2, 0.2, J), 0.0, 1.0)
        r_v = np.maximum(rb_v + rng.uniform(-0.5, 0.5, J), 0.1)
        j = rng.randint(0, J)
        if surrogate.sinr_surrogate_value(a_v, r_v, j, ab_v, rb_v, h, gmin) <= 0:
            assert surrogate.sinr_original_violation(a_v, r_v, j, h, gmin) <= 1e-12
            checked += 1

    # Taylor lower bound slack equals the squared displacement
    for _ in range(100):
        ab, rb = rng.rand(), rng.uniform(0.5, 5.0)
        a, r = rng.rand(), rng.uniform(0.5, 5.0)
        slack = (a * a + r * r) - surrogate.bilinear_lower_bound(a, r, ab, rb)
        assert abs(slack - ((a - ab)**2 + (r - rb)**2)) <= 1e-9

    assert time.monotonic() - t0 < 10.0


# ---------------------------------------------------------------------------
# 4. Convex subproblem solver vs brute-force grid oracles at 1e-3 resolution
#    on 20 randomized small instances, argument agreement within ~1e-3, KKT
#    residuals <= 1e-8, < 60 s.
# ---------------------------------------------------------------------------

def test_criterion_4_solver_vs_grid_oracle():
    t0 = time.monotonic()
    rng = np.random.RandomState(404)
    step = 1e-3
    for i in range(20):
        n = 1 + i % 2
        B = rng.randn(n, n)
        P = B @ B.T + 0.5 * np.eye(n)
        q = rng.uniform(-1.0, 1.0, n)
        c = rng.uniform(0.05, 0.3)
        x0 = rng.uniform(-0.3, 0.3, n)
        r = rng.uniform(0.8, 1.2)

        def f(x):
            return 0.5 * x @ P @ x + q @ x + c * float(np.sum(np.exp(x)))

        prob = SmoothConvexProblem(
            n=n,
            objective=f,
            objective_grad=lambda x: P @ x + q + c * np.exp(x),
            objective_hess=lambda x: P + c * np.diag(np.exp(x)),
            ineq=lambda x: np.concatenate(
                [x - 1.0, -1.0 - x, [float((x - x0) @ (x - x0)) - r * r]]),
            ineq_jac=lambda x: np.vstack(
                [np.eye(n), -np.eye(n), 2.0 * (x - x0)[None, :]]),
            ineq_hess=lambda x, w: 2.0 * w[-1] * np.eye(n),
            constraint_names=[f"c{k}" for k in range(2 * n + 1)],
        )
        res = solve(prob, np.zeros(n))
        assert res.status == "optimal", res.message
        assert max(res.kkt_residuals.values()) <= 1e-8

        xs = np.arange(-1.0, 1.0 + step / 2, step)
        if n == 1:
            vals = 0.5 * P[0, 0] * xs**2 + q[0] * xs + c * np.exp(xs)
            feas = (xs - x0[0])**2 <= r * r
            vals = np.where(feas, vals, np.inf)
            x_grid = np.array([xs[np.argmin(vals)]])
        else:
            X, Y = np.meshgrid(xs, xs, indexing="ij")
            vals = (0.5 * (P[0, 0] * X**2 + 2 * P[0, 1] * X * Y + P[1, 1] * Y**2)
                    + q[0] * X + q[1] * Y + c * (np.exp(X) + np.exp(Y)))
            feas = (X - x0[0])**2 + (Y - x0[1])**2 <= r * r
            vals = np.where(feas, vals, np.inf)
            idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
            x_grid = np.array([X[idx], Y[idx]])
        assert np.max(np.abs(res.x_star - x_grid)) <= 1.5e-3
    assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# 5. Feasibility cross-validation: circle-graph and grid-oracle verdicts
#    agree on >= 20 random small instances whose oracle margin exceeds one
#    grid cell, < 120 s.
# ---------------------------------------------------------------------------

def test_criterion_5_feasibility_cross_validation():
    t0 = time.monotonic()
    rng = np.random.RandomState(505)
    step = 2.0
    checked = 0
    for i in range(24):
        kind = ("feasible", "weak", "unreachable")[i % 3 if i >= 12 else 0]
        if kind == "feasible":
            # one strong station; both endpoints well inside coverage
            while True:
                h_db = rng.uniform(40.0, 44.0)
                gamma = rng.uniform(1.5, 2.5)
                rad = model.coverage_radius(10**(h_db / 10), gamma, 0.0, 50.0)
                if rad is not None and rad >= 40.0:
                    break
            station = rng.uniform(-30.0, 30.0, 2)
            u1 = _unit(rng)
            u2 = _unit(rng)
            q0 = station + 0.5 * rad * u1
            qf = station + 0.5 * rad * u2
        elif kind == "weak":
            # station cannot meet the threshold even overhead
            h_db = rng.uniform(30.0, 33.0)
            gamma = rng.uniform(2.0, 3.0)
            station = rng.uniform(-30.0, 30.0, 2)
            q0 = station + rng.uniform(-20, 20, 2)
            qf = station + rng.uniform(-20, 20, 2)
        else:
            # coverage exists but the start is several slots away from it
            h_db = rng.uniform(40.0, 44.0)
            gamma = rng.uniform(1.5, 2.5)
            rad = model.coverage_radius(10**(h_db / 10), gamma, 0.0, 50.0) or 0.0
            station = rng.uniform(-30.0, 30.0, 2)
            q0 = station + (rad + 3.0 * 30.0) * _unit(rng)
            qf = station + 0.3 * max(rad, 10.0) * _unit(rng)
        if np.allclose(q0, qf):
            qf = qf + np.array([1.0, 0.0])
        s = make_scenario([tuple(station)], h_db=h_db, gamma_min=gamma,
                          v_max=6.0, T=20.0, Tc=5.0, v0=(0.5, 0.5),
                          q_start=tuple(q0), q_final=tuple(qf))
        circle = feasibility.circle_graph_check(s, 0.0)
        oracle = feasibility.grid_oracle_check(s, step, cell_budget=5_000_000)
        eroded = feasibility.grid_oracle_check(s, step, cell_budget=5_000_000,
                                               erode_cells=1)
        if oracle.feasible != eroded.feasible:
            continue  # oracle margin below one grid cell: verdict excluded
        assert circle.feasible == oracle.feasible, (
            f"instance {i} ({kind}): circle={circle.feasible} "
            f"oracle={oracle.feasible}: {circle.message} / {oracle.message}")
        checked += 1
    assert checked >= 20
    assert time.monotonic() - t0 < 120.0


def _unit(rng):
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(phi), np.sin(phi)])


# ---------------------------------------------------------------------------
# 6 & 7. End-to-end convergence on both bundled maps, and binary recovery /
#        validity of the rounded trace.
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def map_runs():
    results = {}
    for s in default_scenarios():
        t0 = time.monotonic()
        trace, reports = sca.run(s)
        results[s.name] = (s, trace, reports, time.monotonic() - t0)
    return results


def test_criterion_6_end_to_end_convergence(map_runs):
    for name, (s, trace, reports, wall) in map_runs.items():
        assert wall < 300.0, f"{name}: {wall:.1f}s"
        assert len(reports) <= 30, name
        objs = [r.surrogate_objective for r in reports]
        frac = abs(objs[-1] - objs[-2]) / max(abs(objs[-2]), 1.0)
        assert frac < 1e-4, name
        exact = [r.exact_penalized_objective for r in reports]
        for a, b in zip(exact, exact[1:]):
            assert b <= a + 1e-6, f"{name}: exact objective increased {a} -> {b}"


def test_criterion_7_binary_recovery_and_validity(map_runs):
    for name, (s, trace, reports, _) in map_runs.items():
        assert s.penalty_lambda == 1e5
        assert reports[-1].max_binary_gap <= 1e-3, name
        assert trace.min_serving_sinr >= s.gamma_min * (1.0 - 1e-3), name
        assert not trace.connectivity_violated, name
        assert trace.endpoint_error_m <= 1e-3, name
        speeds = [np.linalg.norm(sl.velocity) for sl in trace.slots]
        accels = [np.linalg.norm(sl.acceleration) for sl in trace.slots]
        assert max(speeds) <= s.vehicle.v_max + 1e-6, name
        assert max(accels) <= s.vehicle.a_max + 1e-6, name
        assert trace.speed_margin >= -1e-6 and trace.accel_margin >= -1e-6, name


# ---------------------------------------------------------------------------
# 8. Threshold sweep trend on the first bundled map: total power is
#    non-decreasing in the SINR threshold, and the zero-threshold run hugs
#    the start->goal chord more closely than any sweep point. < 15 min.
# ---------------------------------------------------------------------------

def test_criterion_8_power_vs_threshold_trend():
    t0 = time.monotonic()
    map1 = default_scenarios()[0]
    rows = sca.gamma_sweep(map1, [0.5, 1.0, 2.0])
    assert all(r.feasible and r.converged for r in rows)
    powers = [r.total_power for r in rows]
    assert powers == sorted(powers)

    trace0, _ = sca.run(replace(map1, gamma_min=0.0))
    dev0 = sca.max_chord_deviation(trace0, map1)
    devs = [sca.max_chord_deviation(r.trace, map1) for r in rows]
    assert dev0 <= min(devs)
    assert time.monotonic() - t0 < 900.0


# ---------------------------------------------------------------------------
# 9. Determinism: repeated plan runs produce byte-identical trace JSON.
# ---------------------------------------------------------------------------

def test_criterion_9_byte_identical_traces(tmp_path, capsys):
    outputs = []
    for d in ("a", "b"):
        out = tmp_path / d
        code = cli.main(["plan", "--seed-layout", "map-1",
                         "--max-iter", "4", "--out", str(out)])
        assert code in (cli.EXIT_OK, cli.EXIT_CONNECTIVITY)
        outputs.append((out / "trace.json").read_bytes())
        capsys.readouterr()
    assert outputs[0] == outputs[1]
    json.loads(outputs[0])  # remains valid JSON
