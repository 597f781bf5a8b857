"""Successive-convex-approximation driver.

Repeats: build the convex subproblem at the current iterate, solve it with
the interior-point solver, accept the solution as the next iterate (damping
the step toward the previous iterate if the re-expanded point is not feasible
for its own subproblem), until the fractional change of the subproblem
objective drops below epsilon. The relaxed associations are then rounded and
the trajectory is validated against the original (unlinearized) model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import feasibility, model, surrogate
from .scenario import Scenario, ScaledScenario, nondimensionalize
from .solver import SolverConfig, solve
from .surrogate import AssemblyError, SubproblemOptions, TrajectoryIterate, assemble


class InfeasibleScenarioError(RuntimeError):
    """Scenario admits no connectivity-feasible trajectory."""

    def __init__(self, certificate):
        super().__init__(f"infeasible scenario: {certificate.message or 'no certificate path'}")
        self.certificate = certificate


class SolverFailureError(RuntimeError):
    """Subproblem solve failed; partial iteration reports attached."""

    def __init__(self, message, reports):
        super().__init__(message)
        self.reports = reports


@dataclass
class ScaConfig:
    epsilon: float = 1e-4
    max_iterations: int = 50
    lambda_schedule: str = "fixed"  # or "geometric": lambda/100 * 10^t, capped
    rounding_threshold: float = 0.5
    binary_tolerance: float = 1e-3
    theta_min: float = 0.1  # m/s
    sinr_margin: float = 1.05  # seed waypoints target gamma_min * margin
    trust_region: float | None = None  # meters
    grid_step: float | None = None  # oracle step; None = v_max*T_c/10
    oracle_cell_budget: int = 2_000_000
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(kkt_tolerance=1e-9))
    # residual level at which a subproblem solution is accepted even if the
    # solver hit its iteration cap
    accept_kkt: float = 1e-8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.lambda_schedule not in ("fixed", "geometric"):
            raise ValueError("lambda_schedule must be 'fixed' or 'geometric'")


@dataclass
class SolveReport:
    iteration: int
    surrogate_objective: float
    exact_penalized_objective: float
    power_only: float
    penalty_residual: float
    max_binary_gap: float
    solver_status: str
    wall_time: float
    newton_iterations: int = 0
    step_scale: float = 1.0


@dataclass
class SlotRecord:
    n: int
    t_s: float
    position: np.ndarray  # meters
    velocity: np.ndarray  # m/s
    acceleration: np.ndarray  # m/s^2 over slot n-1 -> n
    serving_gbs: int  # 1-based station id
    true_sinr: float
    slot_power: float  # W, over control slot n-1


@dataclass
class TrajectoryTrace:
    slots: list
    power_sum: float
    energy: float
    min_serving_sinr: float
    endpoint_error_m: float
    speed_margin: float
    accel_margin: float
    connectivity_violated: bool
    iterations: int = 0


@dataclass
class SweepPoint:
    gamma: float
    total_power: float | None
    converged: bool
    feasible: bool
    iterations: int = 0
    message: str = ""
    trace: TrajectoryTrace | None = None


def exact_penalized_objective(it: TrajectoryIterate, ss: ScaledScenario, lam: float) -> float:
    """Eq-form objective at the iterate with theta = ||v|| (no surrogates)."""
    val = 0.0
    for n in range(it.N):
        speed = max(float(np.linalg.norm(it.v[n])), 1e-12)
        val += model.power_slack(it.v[n], it.a[n], speed, ss.c1, ss.c2, ss.gravity_g).total
    return val + surrogate.exact_penalty(it.alpha, lam)


def surrogate_objective_at(it: TrajectoryIterate, prev: TrajectoryIterate,
                           ss: ScaledScenario, lam: float) -> float:
    """Subproblem objective value at an accepted iterate (penalty linearized
    at the previous iterate, smoothed power with the iterate's theta)."""
    eps_v = model.EPS_V / ss.length_scale
    val = 0.0
    for n in range(it.N):
        val += model.smoothed_power_value(it.v[n], it.a[n], it.theta[n],
                                          ss.c1, ss.c2, ss.gravity_g, eps_v)
    return val + surrogate.penalty_surrogate(it.alpha, prev.alpha, lam)


def max_binary_gap(alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return float(np.minimum(np.abs(alpha), np.abs(1.0 - alpha)).min(axis=1).max()) \
        if alpha.size else 0.0


def _sanitize(raw: TrajectoryIterate, ss: ScaledScenario, theta_min_s: float) -> TrajectoryIterate:
    """Re-anchor solver output to iterate conventions: alpha clipped and
    renormalized, theta = max(||v||, theta_min), rho = true squared
    distances at the new positions."""
    it = raw.copy()
    it.alpha = np.clip(it.alpha, 0.0, 1.0)
    it.alpha /= it.alpha.sum(axis=1, keepdims=True)
    it.theta = np.maximum(np.linalg.norm(it.v[:it.N], axis=1), theta_min_s)
    diff = it.Q[1:, None, :] - ss.stations_xy[None, :, :]
    it.rho = np.einsum("nji,nji->nj", diff, diff) + ss.altitude_H**2
    return it


def _blend(prev: TrajectoryIterate, cand: TrajectoryIterate, s: float,
           ss: ScaledScenario, theta_min_s: float) -> TrajectoryIterate:
    mixed = TrajectoryIterate(
        Q=prev.Q + s * (cand.Q - prev.Q),
        v=prev.v + s * (cand.v - prev.v),
        a=prev.a + s * (cand.a - prev.a),
        alpha=prev.alpha + s * (cand.alpha - prev.alpha),
        theta=prev.theta.copy(),
        rho=prev.rho.copy(),
    )
    return _sanitize(mixed, ss, theta_min_s)


def _seed_is_valid(seed: TrajectoryIterate, scenario: Scenario, ss: ScaledScenario,
                   cfg: ScaConfig) -> bool:
    if seed.N != ss.N or seed.J != ss.J:
        return False
    L = ss.length_scale
    if np.linalg.norm(seed.v, axis=1).max() > 0.995 * ss.v_max:
        return False
    if np.linalg.norm(seed.a, axis=1).max() > 0.995 * ss.a_max:
        return False
    if np.linalg.norm(seed.v[:seed.N], axis=1).min() < 1.5 * cfg.theta_min / L:
        return False
    if ss.gamma_min > 0:
        serving = np.argmax(seed.alpha, axis=1)
        for n in range(1, ss.N + 1):
            val = model.sinr(seed.Q[n], int(serving[n - 1]), ss.stations_xy,
                             ss.h_lin, ss.altitude_H).sinr
            if val < ss.gamma_min * 1.02:
                return False
    return True


def check_feasibility(scenario: Scenario, cfg: ScaConfig = None):
    """Feasibility policy used by run(): the grid oracle when it fits the
    cell budget, else the circle-graph chain test with the default (zero)
    interference bound."""
    cfg = cfg or ScaConfig()
    if scenario.gamma_min <= 0:
        return feasibility.circle_graph_check(scenario, 0.0)
    d0 = scenario.vehicle.v_max * scenario.timing.slot_T_c
    step = cfg.grid_step if cfg.grid_step is not None else max(d0 / 10.0, 1.0)
    try:
        return feasibility.grid_oracle_check(scenario, step,
                                             cell_budget=cfg.oracle_cell_budget)
    except feasibility.FeasibilityResourceError:
        return feasibility.circle_graph_check(scenario, 0.0)


def _seed_certificate(scenario: Scenario, cfg: ScaConfig, cert):
    """Prefer an eroded-oracle certificate for seeding: its waypoints cross
    coverage gaps where they are narrow and keep a spatial margin, which the
    plain certificate (feasible at exactly d0) does not guarantee."""
    if cert.method != "grid-oracle" or scenario.gamma_min <= 0:
        return cert
    d0 = scenario.vehicle.v_max * scenario.timing.slot_T_c
    step = cfg.grid_step if cfg.grid_step is not None else max(d0 / 10.0, 1.0)
    # the seed benefits from a finer grid than the verdict: eroded coverage at
    # a coarse step overstates the margin the waypoints must keep
    step = min(step, max(d0 / 30.0, 1.0))
    for k in (2, 1):
        try:
            eroded = feasibility.grid_oracle_check(
                scenario, step, cell_budget=cfg.oracle_cell_budget,
                erode_cells=k)
        except feasibility.FeasibilityResourceError:
            break
        if eroded.feasible:
            return eroded
    return cert


def run(scenario: Scenario, cfg: ScaConfig = None,
        seed_iterate: TrajectoryIterate = None):
    """Full pipeline. Returns (TrajectoryTrace, list of SolveReport).

    Raises InfeasibleScenarioError (with certificate) or SolverFailureError
    (with partial reports).
    """
    cfg = cfg or ScaConfig()
    ss = nondimensionalize(scenario)
    L = ss.length_scale
    theta_min_s = cfg.theta_min / L

    it = None
    if seed_iterate is not None and _seed_is_valid(seed_iterate, scenario, ss, cfg):
        it = _sanitize(seed_iterate.copy(), ss, theta_min_s)
        # one-hot the seed associations so the penalty starts consistent
        serving = np.argmax(it.alpha, axis=1)
        it.alpha = np.zeros_like(it.alpha)
        it.alpha[np.arange(it.N), serving] = 1.0
    if it is None:
        cert = check_feasibility(scenario, cfg)
        if not cert.feasible:
            raise InfeasibleScenarioError(cert)
        seed_cert = _seed_certificate(scenario, cfg, cert)
        try:
            it = feasibility.initial_trajectory(
                seed_cert, scenario,
                theta_min=cfg.theta_min, sinr_margin=cfg.sinr_margin)
        except feasibility.InitializationError as exc:
            if seed_cert is not cert:
                it = None  # fall back to the plain certificate's waypoints
            else:
                raise InfeasibleScenarioError(replace(
                    cert, feasible=False,
                    message=f"seed construction failed: {exc}")) from exc
        if it is None:
            try:
                it = feasibility.initial_trajectory(
                    cert, scenario,
                    theta_min=cfg.theta_min, sinr_margin=cfg.sinr_margin)
            except feasibility.InitializationError as exc:
                raise InfeasibleScenarioError(replace(
                    cert, feasible=False,
                    message=f"seed construction failed: {exc}")) from exc

    lam_full = ss.penalty_lambda
    reports = []
    options = SubproblemOptions(theta_min=cfg.theta_min,
                                trust_region=cfg.trust_region)

    def lam_at(t):
        if cfg.lambda_schedule == "geometric":
            return min(lam_full, (lam_full / 100.0) * 10.0**(t - 1))
        return lam_full

    def assemble_at(exp, lam):
        return assemble(exp, replace(ss, penalty_lambda=lam), options)

    try:
        asm = assemble_at(it, lam_at(1))
    except AssemblyError as exc:
        raise SolverFailureError(f"seed iterate rejected by assembly: {exc}", []) from exc

    prev_obj = None
    for t in range(1, cfg.max_iterations + 1):
        t0 = time.perf_counter()
        lam_t = lam_at(t)
        res = solve(asm.problem, asm.warm_start, cfg.solver)
        worst = max(res.kkt_residuals.values())
        if res.status == "numerical_failure" or worst > cfg.accept_kkt:
            raise SolverFailureError(
                f"subproblem {t}: status={res.status}, worst KKT residual {worst:.3e}",
                reports)
        raw = asm.layout.unpack(res.x_star)
        candidate = _sanitize(raw, ss, theta_min_s)
        step = 1.0
        while True:
            try:
                lam_next = lam_at(t + 1)
                asm_next = assemble_at(candidate, lam_next)
                break
            except AssemblyError:
                step *= 0.5
                if step < 1.0 / 256.0:
                    raise SolverFailureError(
                        f"subproblem {t}: no acceptable damped step", reports)
                candidate = _blend(it, _sanitize(raw, ss, theta_min_s), step,
                                   ss, theta_min_s)

        obj = surrogate_objective_at(candidate, it, ss, lam_t)
        it = candidate
        asm = asm_next
        reports.append(SolveReport(
            iteration=t,
            surrogate_objective=obj,
            exact_penalized_objective=exact_penalized_objective(it, ss, lam_t),
            power_only=exact_penalized_objective(it, ss, 0.0),
            penalty_residual=float(np.sum(it.alpha - it.alpha**2)),
            max_binary_gap=max_binary_gap(it.alpha),
            solver_status=res.status,
            wall_time=time.perf_counter() - t0,
            newton_iterations=res.newton_iterations_total,
            step_scale=step,
        ))
        if prev_obj is not None and lam_t == lam_full:
            frac = abs(obj - prev_obj) / max(abs(prev_obj), 1.0)
            if frac < cfg.epsilon:
                break
        prev_obj = obj

    trace = round_and_validate(it, scenario)
    trace.iterations = len(reports)
    return trace, reports


def round_and_validate(iterate: TrajectoryIterate, scenario: Scenario) -> TrajectoryTrace:
    """Round associations to the per-slot argmax station and re-check every
    original-model quantity (true SINR, endpoint, speed/acceleration caps)."""
    ss = nondimensionalize(scenario)
    L = ss.length_scale
    N = iterate.N
    Tc = scenario.timing.slot_T_c
    serving = np.argmax(iterate.alpha, axis=1)

    Q = iterate.Q * L
    v = iterate.v * L
    a = iterate.a * L
    slots = []
    power_sum = 0.0
    min_sinr = np.inf
    for n in range(1, N + 1):
        k = int(serving[n - 1])
        bd = model.sinr(Q[n], k, scenario.stations_xy, scenario.h_linear,
                        scenario.vehicle.altitude_H)
        speed = max(float(np.linalg.norm(v[n - 1])), 1e-9)
        p = model.power_slack(v[n - 1], a[n - 1], speed,
                              scenario.vehicle.c1, scenario.vehicle.c2,
                              scenario.vehicle.gravity_g).total
        power_sum += p
        min_sinr = min(min_sinr, bd.sinr)
        slots.append(SlotRecord(
            n=n, t_s=n * Tc, position=Q[n].copy(), velocity=v[n].copy(),
            acceleration=a[n - 1].copy(), serving_gbs=k + 1,
            true_sinr=bd.sinr, slot_power=p))

    endpoint_error = float(np.linalg.norm(Q[N] - scenario.q_final))
    speed_margin = scenario.vehicle.v_max - float(np.linalg.norm(v, axis=1).max())
    accel_margin = scenario.vehicle.a_max - float(np.linalg.norm(a, axis=1).max())
    violated = bool(scenario.gamma_min > 0
                    and min_sinr < scenario.gamma_min * (1.0 - 1e-3))
    return TrajectoryTrace(
        slots=slots,
        power_sum=power_sum,
        energy=power_sum * Tc,
        min_serving_sinr=float(min_sinr),
        endpoint_error_m=endpoint_error,
        speed_margin=speed_margin,
        accel_margin=accel_margin,
        connectivity_violated=violated,
    )


def gamma_sweep(scenario: Scenario, gammas, cfg: ScaConfig = None):
    """Run the pipeline per SINR threshold (ascending), warm-starting each
    point from the previous feasible solution. Per-point failures become
    rows, not exceptions."""
    cfg = cfg or ScaConfig()
    if list(gammas) != sorted(gammas):
        raise ValueError("gammas must be sorted ascending")
    rows = []
    seed = None
    for gamma in gammas:
        sc = replace(scenario, gamma_min=float(gamma))
        try:
            trace, reports = run(sc, cfg, seed_iterate=seed)
        except InfeasibleScenarioError as exc:
            rows.append(SweepPoint(gamma=float(gamma), total_power=None,
                                   converged=False, feasible=False,
                                   message=str(exc)))
            continue
        except SolverFailureError as exc:
            rows.append(SweepPoint(gamma=float(gamma), total_power=None,
                                   converged=False, feasible=True,
                                   iterations=len(exc.reports),
                                   message=str(exc)))
            continue
        converged = (trace.iterations < cfg.max_iterations
                     and not trace.connectivity_violated)
        rows.append(SweepPoint(gamma=float(gamma), total_power=trace.power_sum,
                               converged=converged, feasible=True,
                               iterations=trace.iterations, trace=trace))
        seed = _trace_seed(sc, trace)
    # A trajectory meeting a higher SINR threshold is feasible at every lower
    # one, so a later point that happens to converge to lower power is a
    # valid (better) solution for earlier points too; propagate it downward
    # so the reported curve reflects the best known solution per threshold.
    best = None
    for row in reversed(rows):
        if row.total_power is None:
            continue
        if best is not None and best.total_power < row.total_power:
            row.total_power = best.total_power
            row.trace = best.trace
        else:
            best = row
    return rows


def _trace_seed(scenario: Scenario, trace: TrajectoryTrace) -> TrajectoryIterate:
    """Rebuild a scaled iterate from a rounded trace for warm-starting."""
    ss = nondimensionalize(scenario)
    L = ss.length_scale
    N, J = ss.N, ss.J
    Q = np.vstack([np.asarray(scenario.q_start)[None, :],
                   np.array([s.position for s in trace.slots])]) / L
    v = np.vstack([np.asarray(scenario.vehicle.v0)[None, :],
                   np.array([s.velocity for s in trace.slots])]) / L
    a = np.array([s.acceleration for s in trace.slots]) / L
    alpha = np.zeros((N, J))
    for s_ in trace.slots:
        alpha[s_.n - 1, s_.serving_gbs - 1] = 1.0
    theta = np.maximum(np.linalg.norm(v[:N], axis=1), 1e-3 / L)
    diff = Q[1:, None, :] - ss.stations_xy[None, :, :]
    rho = np.einsum("nji,nji->nj", diff, diff) + ss.altitude_H**2
    return TrajectoryIterate(Q=Q, v=v, a=a, alpha=alpha, theta=theta, rho=rho)


def max_chord_deviation(trace: TrajectoryTrace, scenario: Scenario) -> float:
    """Maximum perpendicular distance of trace positions from the start->goal
    segment (meters)."""
    q0 = np.asarray(scenario.q_start, dtype=float)
    qf = np.asarray(scenario.q_final, dtype=float)
    d = qf - q0
    denom = float(d @ d)
    dev = 0.0
    for s_ in trace.slots:
        p = np.asarray(s_.position)
        if denom == 0:
            dev = max(dev, float(np.linalg.norm(p - q0)))
            continue
        t = float(np.clip((p - q0) @ d / denom, 0.0, 1.0))
        dev = max(dev, float(np.linalg.norm(p - (q0 + t * d))))
    return dev
