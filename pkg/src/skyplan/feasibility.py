"""Connectivity feasibility checks and construction of a feasible seed iterate.

Two independent checkers are provided:

* :func:`circle_graph_check` — the analytic chain test: each station gets a
  coverage disk (radius from an explicit interference bound), and a layered
  breadth-first search looks for a station sequence k_1..k_N whose disks can
  be chained from start to goal with per-slot displacement d0 = v_max * T_c.
* :func:`grid_oracle_check` — a brute-force oracle: positions are discretized
  on a grid, coverage is evaluated with the full SINR expression, and layered
  reachability is computed exactly up to the grid resolution.

:func:`initial_trajectory` turns a feasible certificate into a kinematically
consistent iterate for the successive-approximation loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import model
from .scenario import Scenario, nondimensionalize
from .surrogate import TrajectoryIterate


class FeasibilityResourceError(RuntimeError):
    """The grid oracle would exceed its cell budget."""


class InitializationError(RuntimeError):
    """No kinematically admissible seed trajectory was found."""


@dataclass(frozen=True)
class AssociationVector:
    """Serving-station sequence for slots n = 1..N; entries are 1-based."""

    serving: tuple

    def zero_based(self) -> np.ndarray:
        return np.asarray(self.serving, dtype=int) - 1


@dataclass(frozen=True)
class FeasibilityCertificate:
    feasible: bool
    association: AssociationVector | None
    waypoints: np.ndarray | None  # (N+1, 2) positions at t_0..t_N, meters
    method: str  # "circle-graph" or "grid-oracle"
    interference_bound: float = 0.0
    max_observed_interference: float | None = None
    min_waypoint_sinr: float | None = None
    message: str = ""


def _segment_closest_point(p, seg_a, seg_b):
    """Closest point of segment [seg_a, seg_b] to point p."""
    d = seg_b - seg_a
    denom = float(d @ d)
    if denom == 0.0:
        return seg_a.copy()
    t = float(np.clip((p - seg_a) @ d / denom, 0.0, 1.0))
    return seg_a + t * d


def _disk_project(p, center, radius):
    d = p - center
    dist = float(np.hypot(d[0], d[1]))
    if dist <= radius:
        return p.copy()
    return center + (radius / dist) * d


def _fit_waypoints(q0, qf, N, centers, radii, d0, max_iter=500, tol=1e-9):
    """Find waypoints w_0..w_N with w_0 = q0, per-slot spacing <= d0, and
    every w_n (n >= 1) inside some coverage disk, by alternating spacing
    clamps with projection onto the nearest disk. The serving disk per slot
    is chosen freely each sweep (ties broken toward the lowest index), so
    chains that must dwell several slots in one disk are found naturally.
    w_N is anchored at the projection of qf onto its nearest disk.

    Returns (waypoints, serving) or (None, None) if no assignment converges.
    Any returned assignment automatically satisfies the chain inequalities:
    consecutive station centers are within r + d0 + r of each other by the
    triangle inequality.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)

    def nearest_disk(p):
        return int(np.argmin(np.linalg.norm(centers - p, axis=1) - radii))

    tgrid = np.linspace(0.0, 1.0, N + 1)
    w = q0[None, :] + tgrid[:, None] * (qf - q0)[None, :]
    jN = nearest_disk(qf)
    w[N] = _disk_project(qf, centers[jN], radii[jN])
    serving = np.zeros(N + 1, dtype=int)
    serving[N] = jN

    def clamp(n, anchor):
        gap = w[n] - anchor
        dist = float(np.hypot(gap[0], gap[1]))
        if dist > d0:
            w[n] = anchor + (d0 / dist) * gap

    for _ in range(max_iter):
        for n in range(1, N):
            clamp(n, w[n - 1])
            serving[n] = nearest_disk(w[n])
            w[n] = _disk_project(w[n], centers[serving[n]], radii[serving[n]])
        for n in range(N - 1, 0, -1):
            clamp(n, w[n + 1])
            serving[n] = nearest_disk(w[n])
            w[n] = _disk_project(w[n], centers[serving[n]], radii[serving[n]])
        gaps = np.linalg.norm(np.diff(w, axis=0), axis=1)
        in_disks = all(
            np.linalg.norm(w[n] - centers[serving[n]]) <= radii[serving[n]] + tol
            for n in range(1, N + 1))
        if np.all(gaps <= d0 + tol) and in_disks:
            return w, serving
    return None, None


def circle_graph_check(scenario: Scenario, interference_bound: float = 0.0) -> FeasibilityCertificate:
    """Chain test over coverage disks with an explicit interference bound."""
    N = scenario.N
    d0 = scenario.vehicle.v_max * scenario.timing.slot_T_c
    q0 = np.asarray(scenario.q_start, dtype=float)
    qf = np.asarray(scenario.q_final, dtype=float)
    stations = scenario.stations_xy
    H = scenario.vehicle.altitude_H

    if scenario.gamma_min <= 0:
        if np.linalg.norm(qf - q0) > N * d0 + 1e-9:
            return FeasibilityCertificate(
                feasible=False, association=None, waypoints=None,
                method="circle-graph", interference_bound=interference_bound,
                message="goal unreachable: straight-line distance exceeds N*d0")
        tgrid = np.linspace(0.0, 1.0, N + 1)
        w = q0[None, :] + tgrid[:, None] * (qf - q0)[None, :]
        diff = stations[None, :, :] - w[:, None, :]
        nearest = np.argmin(np.einsum("nji,nji->nj", diff, diff), axis=1)
        assoc = AssociationVector(tuple(int(k) + 1 for k in nearest[1:]))
        return FeasibilityCertificate(
            feasible=True, association=assoc, waypoints=w, method="circle-graph",
            interference_bound=interference_bound,
            message="no connectivity threshold: straight-line seed")

    radii = np.array([
        r if (r := model.coverage_radius(h, scenario.gamma_min, interference_bound, H)) is not None
        else np.nan
        for h in scenario.h_linear])
    candidates = np.flatnonzero(~np.isnan(radii))
    if candidates.size == 0:
        return FeasibilityCertificate(
            feasible=False, association=None, waypoints=None, method="circle-graph",
            interference_bound=interference_bound,
            message="no station meets the threshold even directly overhead")

    # layered breadth-first search; parents[n][k] = all predecessor stations
    dist_from_start = np.linalg.norm(stations - q0, axis=1)
    reach_prev = {int(j) for j in candidates if dist_from_start[j] <= radii[j] + d0}
    parents = [{j: set() for j in reach_prev}]
    pair_dist = np.linalg.norm(stations[:, None, :] - stations[None, :, :], axis=2)
    for _ in range(1, N):
        layer = {}
        for j in sorted(reach_prev):
            for k in candidates:
                k = int(k)
                if pair_dist[j, k] <= radii[j] + d0 + radii[k]:
                    layer.setdefault(k, set()).add(j)
        parents.append(layer)
        reach_prev = set(layer)
        if not reach_prev:
            break

    goals = []
    if len(parents) == N:
        dist_to_goal = np.linalg.norm(stations - qf, axis=1)
        goals = [j for j in sorted(parents[-1]) if dist_to_goal[j] <= radii[j] + d0]
    if not goals:
        return FeasibilityCertificate(
            feasible=False, association=None, waypoints=None, method="circle-graph",
            interference_bound=interference_bound,
            message="no disk chain connects start to goal within N slots")

    w, serving_local = _fit_waypoints(
        q0, qf, N, stations[candidates], radii[candidates], d0)
    if w is None:
        return FeasibilityCertificate(
            feasible=False, association=None, waypoints=None, method="circle-graph",
            interference_bound=interference_bound,
            message="disk chain found but no waypoint assignment with per-slot "
                    "displacement <= d0; reporting infeasible")
    chain = [int(candidates[serving_local[n]]) for n in range(1, N + 1)]
    sinr_vals = [
        model.sinr(w[n], chain[n - 1], stations, scenario.h_linear, H).sinr
        for n in range(1, N + 1)]
    assoc = AssociationVector(tuple(j + 1 for j in chain))
    return FeasibilityCertificate(
        feasible=True, association=assoc, waypoints=w, method="circle-graph",
        interference_bound=interference_bound,
        min_waypoint_sinr=float(min(sinr_vals)))


def grid_oracle_check(scenario: Scenario, grid_step: float,
                      cell_budget: int = 2_000_000,
                      erode_cells: int = 0) -> FeasibilityCertificate:
    """Brute-force connectivity check on a position grid.

    With erode_cells > 0 the covered region is shrunk by that many cells and
    the per-slot displacement is reduced accordingly, which tests whether the
    verdict survives a margin of that many grid cells.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    N = scenario.N
    d0 = scenario.vehicle.v_max * scenario.timing.slot_T_c
    q0 = np.asarray(scenario.q_start, dtype=float)
    qf = np.asarray(scenario.q_final, dtype=float)
    stations = scenario.stations_xy
    h = scenario.h_linear
    H = scenario.vehicle.altitude_H

    if np.linalg.norm(qf - q0) > N * d0 + 1e-9:
        return FeasibilityCertificate(
            feasible=False, association=None, waypoints=None, method="grid-oracle",
            message="goal unreachable: straight-line distance exceeds N*d0")
    if scenario.gamma_min <= 0:
        tgrid = np.linspace(0.0, 1.0, N + 1)
        w = q0[None, :] + tgrid[:, None] * (qf - q0)[None, :]
        diff = stations[None, :, :] - w[:, None, :]
        nearest = np.argmin(np.einsum("nji,nji->nj", diff, diff), axis=1)
        assoc = AssociationVector(tuple(int(k) + 1 for k in nearest[1:]))
        return FeasibilityCertificate(
            feasible=True, association=assoc, waypoints=w, method="grid-oracle",
            message="no connectivity threshold: straight-line seed")

    # any reachable-and-useful point lies in the ellipse
    # dist(q0) + dist(qf) <= N*d0, whose extent is at most N*d0/2 beyond the
    # endpoints' bounding box
    pad = 0.5 * N * d0 + 2.0 * grid_step
    lo = np.minimum(q0, qf) - pad
    hi = np.maximum(q0, qf) + pad
    xs = np.arange(lo[0], hi[0] + grid_step, grid_step)
    ys = np.arange(lo[1], hi[1] + grid_step, grid_step)
    if xs.size * ys.size > cell_budget:
        raise FeasibilityResourceError(
            f"grid of {xs.size}x{ys.size} cells exceeds budget {cell_budget}")
    gx, gy = np.meshgrid(xs, ys, indexing="ij")

    d2 = ((gx[None, :, :] - stations[:, 0, None, None]) ** 2
          + (gy[None, :, :] - stations[:, 1, None, None]) ** 2
          + H * H)
    terms = h[:, None, None] / d2
    total = terms.sum(axis=0) + 1.0
    sinr_all = terms / (total[None, :, :] - terms)
    best_station = np.argmax(sinr_all, axis=0)
    best_sinr = np.take_along_axis(sinr_all, best_station[None], axis=0)[0]
    covered = best_sinr >= scenario.gamma_min
    if erode_cells > 0:
        covered = ndimage.binary_erosion(covered, iterations=erode_cells)
        d0 = d0 - erode_cells * grid_step * np.sqrt(2.0)
        if d0 <= 0:
            return FeasibilityCertificate(
                feasible=False, association=None, waypoints=None,
                method="grid-oracle", message="eroded displacement budget is empty")
    interference = total - 1.0 - np.take_along_axis(terms, best_station[None], axis=0)[0]
    max_int = float(interference[covered].max()) if covered.any() else None

    def dist_to(mask):
        # Euclidean distance (meters) from every cell to the nearest cell of
        # `mask`
        return ndimage.distance_transform_edt(~mask, sampling=grid_step)

    start_mask = np.zeros_like(covered)
    i0 = int(round((q0[0] - lo[0]) / grid_step))
    j0 = int(round((q0[1] - lo[1]) / grid_step))
    start_mask[i0, j0] = True
    reach = [covered & (dist_to(start_mask) <= d0)]
    for _ in range(2, N + 1):
        if not reach[-1].any():
            break
        reach.append(covered & (dist_to(reach[-1]) <= d0))

    i_f = int(round((qf[0] - lo[0]) / grid_step))
    j_f = int(round((qf[1] - lo[1]) / grid_step))
    feasible = len(reach) == N and bool(reach[-1][i_f, j_f])
    if not feasible:
        return FeasibilityCertificate(
            feasible=False, association=None, waypoints=None, method="grid-oracle",
            max_observed_interference=max_int,
            message="no covered grid path reaches the goal within N slots")

    # backtrack a cell path, preferring cells near the expected progress
    # point q0 + (n/N)(qf - q0) so the seed trajectory moves at a steady pace
    cell_xy = np.stack([gx, gy], axis=-1)
    qf_center = np.array([gx[i_f, j_f], gy[i_f, j_f]])
    w = np.empty((N + 1, 2))
    w[0], w[N] = q0, qf
    cur = qf_center
    budget = max(d0 - float(np.linalg.norm(qf - qf_center)), 0.5 * d0)
    cells = [None] * (N + 1)
    cells[N] = (i_f, j_f)
    for n in range(N - 1, 0, -1):
        cand = reach[n - 1] & (np.linalg.norm(cell_xy - cur, axis=-1) <= budget)
        if not cand.any():
            cand = reach[n - 1] & (np.linalg.norm(cell_xy - cur, axis=-1) <= d0)
        progress = q0 + (n / N) * (qf - q0)
        score = np.where(cand, np.linalg.norm(cell_xy - progress, axis=-1), np.inf)
        idx = np.unravel_index(int(np.argmin(score)), score.shape)
        cells[n] = idx
        w[n] = cell_xy[idx]
        cur = w[n]
        budget = d0

    serving = []
    for n in range(1, N + 1):
        if n < N:
            serving.append(int(best_station[cells[n]]))
        else:
            vals = [model.sinr(qf, j, stations, h, H).sinr for j in range(len(h))]
            serving.append(int(np.argmax(vals)))
    sinr_vals = [model.sinr(w[n], serving[n - 1], stations, h, H).sinr
                 for n in range(1, N + 1)]
    assoc = AssociationVector(tuple(j + 1 for j in serving))
    return FeasibilityCertificate(
        feasible=True, association=assoc, waypoints=w, method="grid-oracle",
        max_observed_interference=max_int,
        min_waypoint_sinr=float(min(sinr_vals)))


def initial_trajectory(cert: FeasibilityCertificate, scenario: Scenario,
                       theta_min: float = 0.1, sinr_margin: float = 1.05,
                       max_retries: int = 20) -> TrajectoryIterate:
    """Fit a kinematically consistent iterate through the certificate's
    waypoints (scaled units).

    Velocities are the free variables of a regularized least-squares fit of
    the trapezoidal position recursion to the waypoints, with the endpoint
    held exactly. Retries smooth the profile when speed/acceleration caps are
    hit and pull waypoints toward their serving stations when the true SINR
    at the fitted positions falls below gamma_min * sinr_margin.
    """
    if not cert.feasible:
        raise InitializationError("certificate reports infeasible")
    ss = nondimensionalize(scenario)
    L = scenario.length_scale
    N, J = ss.N, len(ss.h_lin)
    Tc = ss.T_c
    q0 = np.asarray(ss.q_start)
    qf = np.asarray(ss.q_final)
    v0 = np.asarray(ss.v0)
    stations = ss.stations_xy
    h = ss.h_lin
    H = ss.altitude_H
    gamma = ss.gamma_min
    theta_min_s = theta_min / L
    serving = cert.association.zero_based()

    targets = np.asarray(cert.waypoints, dtype=float) / L
    # Re-pace the waypoint polyline: certificate waypoints can put consecutive
    # points a full slot-jump apart (forcing fitted speeds at the cap) next to
    # much shorter legs. Slot points are re-placed along the polyline with
    # even legs capped below d0, skipping arc stretches whose SINR lacks the
    # seed margin; serving stations are re-derived at the new points.
    # place with a reduced margin; the pull-to-station retries below lift
    # individual points the rest of the way to gamma * sinr_margin
    repaced = _repace_polyline(targets, N, ss, gamma * min(1.02, sinr_margin))
    if repaced is not None:
        targets = repaced
        targets[0], targets[N] = q0, qf
        serving = [
            int(np.argmax([model.sinr(targets[n], j, stations, h, H).sinr
                           for j in range(J)]))
            for n in range(1, N + 1)
        ]
    chord = q0[None, :] + np.linspace(0, 1, N + 1)[:, None] * (qf - q0)[None, :]

    # position map: Q[n] = q0 + Tc*(v0/2 + sum_{m<n} v[m] + v[n]/2), n >= 1,
    # with free variables v[1..N]
    C = np.zeros((N, N))
    for n in range(1, N + 1):
        C[n - 1, :n - 1] = 1.0
        C[n - 1, n - 1] = 0.5
    base = q0[None, :] + 0.5 * Tc * v0[None, :]  # contribution independent of v[1..N]

    def fit(targets, weights, mu):
        # decoupled per coordinate: minimize sum_{n=1..N-1} w_n (Q[n]-t[n])^2
        # + mu * sum (v[n]-v[n-1])^2  s.t. Q[N] = qf
        A = Tc * C[:-1]  # rows n=1..N-1
        W = np.diag(weights[1:N])
        D = np.eye(N) - np.eye(N, k=-1)  # v[1]-v0, v[2]-v[1], ...
        aN = Tc * C[-1]
        v_fit = np.empty((N, 2))
        for d in range(2):
            y = targets[1:N, d] - base[0, d]
            Hm = 2.0 * (A.T @ W @ A + mu * (D.T @ D))
            g = 2.0 * (A.T @ W @ y + mu * D.T @ (np.eye(N)[:, 0] * v0[d]))
            K = np.zeros((N + 1, N + 1))
            K[:N, :N] = Hm
            K[:N, N] = aN
            K[N, :N] = aN
            rhs = np.concatenate([g, [qf[d] - base[0, d]]])
            sol = np.linalg.solve(K, rhs)
            v_fit[:, d] = sol[:N]
        v = np.vstack([v0[None, :], v_fit])
        Q = np.vstack([q0[None, :], base + Tc * (C @ v_fit)])
        a = np.diff(v, axis=0) / Tc
        return Q, v, a

    mu = 0.1
    bump = 0.0
    weights = np.ones(N + 1)
    chord_dir = qf - q0
    norm = np.linalg.norm(chord_dir)
    perp = (np.array([-chord_dir[1], chord_dir[0]]) / norm) if norm > 0 else np.array([1.0, 0.0])
    Q = v = a = None
    for _ in range(max_retries):
        work = targets.copy()
        if bump > 0:
            work = work + bump * np.sin(np.pi * np.arange(N + 1) / N)[:, None] * perp[None, :]
        work[0], work[N] = q0, qf
        Q, v, a = fit(work, weights, mu)
        ok = True
        if (np.linalg.norm(v, axis=1).max() > 0.97 * ss.v_max
                or np.linalg.norm(a, axis=1).max() > 0.97 * ss.a_max):
            # smooth harder and bisect the waypoints toward the chord
            mu *= 2.0
            targets = chord + 0.5 * (targets - chord)
            ok = False
        if np.linalg.norm(v[:N], axis=1).min() < 2.0 * theta_min_s:
            bump = max(2.0 * bump, 4.0 * theta_min_s * Tc)
            ok = False
        if gamma > 0 and ok:
            target_sinr = gamma * sinr_margin
            for n in range(1, N + 1):
                k = serving[n - 1]
                val = model.sinr(Q[n], k, stations, h, H).sinr
                if val >= target_sinr:
                    continue
                if n == N:
                    raise InitializationError(
                        f"goal position SINR {val:.3f} below threshold; "
                        "scenario is connectivity-infeasible at the endpoint")
                moved = _pull_to_station(Q[n], stations[k], k, stations, h, H, target_sinr)
                if moved is None:
                    raise InitializationError(
                        f"cannot reach SINR {target_sinr:.3f} at slot {n} by "
                        "moving toward the serving station")
                targets[n] = moved
                weights[n] *= 3.0
                ok = False
        if ok:
            break
    else:
        raise InitializationError(
            f"no admissible seed after {max_retries} retries "
            f"(caps v_max={scenario.vehicle.v_max}, a_max={scenario.vehicle.a_max})")

    alpha = np.zeros((N, J))
    alpha[np.arange(N), serving] = 1.0
    theta = np.maximum(np.linalg.norm(v[:N], axis=1), theta_min_s)
    diff = Q[1:, None, :] - stations[None, :, :]
    rho = np.einsum("nji,nji->nj", diff, diff) + H * H
    return TrajectoryIterate(Q=Q, v=v, a=a, alpha=alpha, theta=theta, rho=rho)


def _repace_polyline(targets, N, ss, target_sinr):
    """Place N+1 slot points along the waypoint polyline (scaled units).

    Dynamic program over an arc-length grid: legs are capped at 0.9 * d0,
    every interior point must meet ``target_sinr`` (best station), and the
    squared deviation of leg lengths from the even split is minimized, so
    uncovered stretches are straddled without creating full-speed legs.
    Returns the (N+1, 2) points, or None when no such pacing exists.
    """
    targets = np.asarray(targets, dtype=float)
    seg = np.linalg.norm(np.diff(targets, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0.0:
        return None
    max_leg = 0.93 * ss.v_max * ss.T_c
    # first-slot displacement is limited by the fixed initial velocity:
    # |Q1 - q0| <= Tc * (|v0| + |v1|) / 2 under the trapezoidal update
    v0n = float(np.hypot(ss.v0[0], ss.v0[1]))
    caps = np.full(N, max_leg)
    caps[0] = 0.93 * ss.T_c * 0.5 * (v0n + ss.v_max)
    if total > float(caps.sum()):
        return None
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    step = min(total / (8.0 * N), max_leg / 16.0)
    grid = np.linspace(0.0, total, int(np.ceil(total / step)) + 1)
    pts = np.stack([np.interp(grid, cum, targets[:, d]) for d in range(2)], axis=1)
    if target_sinr > 0.0:
        J = len(ss.h_lin)
        best = np.max(
            [[model.sinr(p, j, ss.stations_xy, ss.h_lin, ss.altitude_H).sinr
              for j in range(J)] for p in pts],
            axis=1)
        ok = best >= target_sinr
    else:
        ok = np.ones(len(grid), dtype=bool)
    ok[0] = ok[-1] = True  # endpoints are fixed; checked by the caller
    even = total / N
    G = len(grid)
    INF = np.inf
    cost = np.full(G, INF)
    cost[0] = 0.0
    parent = np.full((N, G), -1, dtype=np.int64)
    for n in range(1, N + 1):
        new = np.full(G, INF)
        for g in range(G):
            if not ok[g] or (n == N and g != G - 1):
                continue
            lo = np.searchsorted(grid, grid[g] - caps[n - 1], side="left")
            prev = cost[lo:g + 1]
            if not np.isfinite(prev).any():
                continue
            legs = grid[g] - grid[lo:g + 1]
            c = prev + (legs - even) ** 2
            k = int(np.argmin(c))
            if np.isfinite(c[k]):
                new[g] = c[k]
                parent[n - 1, g] = lo + k
        cost = new
    if not np.isfinite(cost[G - 1]):
        return None
    idx = np.empty(N + 1, dtype=np.int64)
    idx[N] = G - 1
    for n in range(N, 0, -1):
        idx[n - 1] = parent[n - 1, idx[n]]
    return pts[idx].copy()


def _pull_to_station(p, station, k, stations, h, H, target, steps=64):
    for t in np.linspace(0.0, 1.0, steps + 1)[1:]:
        cand = p + t * (station - p)
        if model.sinr(cand, k, stations, h, H).sinr >= target:
            return cand
    return None
