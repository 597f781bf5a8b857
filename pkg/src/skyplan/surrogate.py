"""Convex subproblem assembly around an expansion iterate.

Each planning iteration linearizes the nonconvex pieces of the penalized
problem at the previous iterate: the binary-penalty term -alpha^2, the
speed-slack coupling theta <= ||v||, the squared-distance equality for rho,
and the bilinear alpha*rho product inside the SINR constraint. The result is
a smooth convex program handed to :mod:`skyplan.solver`.

All quantities here are in scaled (nondimensionalized) units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .solver import SmoothConvexProblem


class AssemblyError(ValueError):
    """Expansion point is not feasible for its own subproblem."""


@dataclass
class TrajectoryIterate:
    """One planning iterate on the grid n = 0..N.

    Q, v cover n = 0..N; a and theta cover control slots n = 0..N-1;
    alpha and rho rows correspond to connectivity slots n = 1..N.
    """

    Q: np.ndarray  # (N+1, 2)
    v: np.ndarray  # (N+1, 2)
    a: np.ndarray  # (N, 2)
    alpha: np.ndarray  # (N, J)
    theta: np.ndarray  # (N,)
    rho: np.ndarray  # (N, J)

    @property
    def N(self) -> int:
        return self.a.shape[0]

    @property
    def J(self) -> int:
        return self.alpha.shape[1]

    def copy(self) -> "TrajectoryIterate":
        return TrajectoryIterate(self.Q.copy(), self.v.copy(), self.a.copy(),
                                 self.alpha.copy(), self.theta.copy(), self.rho.copy())


@dataclass(frozen=True)
class Layout:
    """Flattened variable layout: Q, v, a, alpha, theta, rho."""

    N: int
    J: int

    @property
    def n_vars(self) -> int:
        N, J = self.N, self.J
        return 2 * (N + 1) + 2 * (N + 1) + 2 * N + N * J + N + N * J

    def _offsets(self):
        N, J = self.N, self.J
        oQ = 0
        ov = oQ + 2 * (N + 1)
        oa = ov + 2 * (N + 1)
        oal = oa + 2 * N
        oth = oal + N * J
        orh = oth + N
        return oQ, ov, oa, oal, oth, orh

    def iQ(self, n):  # position component slice for slot n
        return self._offsets()[0] + 2 * n

    def iv(self, n):
        return self._offsets()[1] + 2 * n

    def ia(self, n):
        return self._offsets()[2] + 2 * n

    def ialpha(self, n, j):  # n = 1..N
        return self._offsets()[3] + (n - 1) * self.J + j

    def itheta(self, n):  # n = 0..N-1
        return self._offsets()[4] + n

    def irho(self, n, j):  # n = 1..N
        return self._offsets()[5] + (n - 1) * self.J + j

    def pack(self, it: TrajectoryIterate) -> np.ndarray:
        x = np.empty(self.n_vars)
        oQ, ov, oa, oal, oth, orh = self._offsets()
        N, J = self.N, self.J
        x[oQ:ov] = it.Q.ravel()
        x[ov:oa] = it.v.ravel()
        x[oa:oal] = it.a.ravel()
        x[oal:oth] = it.alpha.ravel()
        x[oth:orh] = it.theta
        x[orh:] = it.rho.ravel()
        return x

    def unpack(self, x) -> TrajectoryIterate:
        oQ, ov, oa, oal, oth, orh = self._offsets()
        N, J = self.N, self.J
        return TrajectoryIterate(
            Q=x[oQ:ov].reshape(N + 1, 2).copy(),
            v=x[ov:oa].reshape(N + 1, 2).copy(),
            a=x[oa:oal].reshape(N, 2).copy(),
            alpha=x[oal:oth].reshape(N, J).copy(),
            theta=x[oth:orh].copy(),
            rho=x[orh:].reshape(N, J).copy(),
        )


@dataclass
class SubproblemOptions:
    """Assembly knobs, in physical units where dimensional."""

    theta_min: float = 0.1  # m/s; floor on the speed slack
    eps_v: float = model.EPS_V  # m/s; ||v||^3 smoothing
    rho_min_factor: float = 0.5  # rho >= (factor * H)^2
    trust_region: float | None = None  # meters; None disables
    interior_delta: float = 1e-6  # warm-start push off active boundaries


@dataclass
class AssembledSubproblem:
    problem: SmoothConvexProblem
    warm_start: np.ndarray
    layout: Layout
    expansion: TrajectoryIterate
    options: SubproblemOptions


# ---------------------------------------------------------------------------
# Individual surrogate pieces (also used directly by tests)
# ---------------------------------------------------------------------------

def penalty_surrogate(alpha, alpha_prev, lam):
    """Linearized penalty lam*(sum alpha - sum[abar^2 + 2 abar (alpha-abar)]).
    Affine in alpha; equals the exact penalty lam*sum(alpha - alpha^2) at
    alpha = alpha_prev and overestimates it elsewhere."""
    alpha = np.asarray(alpha, dtype=float)
    ab = np.asarray(alpha_prev, dtype=float)
    return lam * float(np.sum(alpha) - np.sum(ab * ab + 2.0 * ab * (alpha - ab)))


def exact_penalty(alpha, lam):
    alpha = np.asarray(alpha, dtype=float)
    return lam * float(np.sum(alpha - alpha * alpha))


def theta_speed_constraint(theta_n, v_n, v_prev_n):
    """Value of constraint theta^2 - [||vbar||^2 + 2 vbar^T (v - vbar)] <= 0
    for one slot. Feasibility of this surrogate implies ||v||^2 >= theta^2."""
    v_n = np.asarray(v_n, dtype=float)
    vb = np.asarray(v_prev_n, dtype=float)
    lin = float(vb @ vb) + 2.0 * float(vb @ (v_n - vb))
    return theta_n * theta_n - lin


def rho_affine_value(Q_n, Q_prev_n, station_xy, altitude):
    """Linearized squared 3D distance to a station: the value of rho implied
    by the affine link at position Q_n when expanded at Q_prev_n. It
    underestimates the true squared distance and is exact at Q_n = Q_prev_n.
    """
    Q_n = np.asarray(Q_n, dtype=float)
    Qb = np.asarray(Q_prev_n, dtype=float)
    g = Qb - np.asarray(station_xy, dtype=float)
    return float(g @ g) + altitude * altitude + 2.0 * float(g @ (Q_n - Qb))


def bilinear_lower_bound(alpha, rho, alpha_prev, rho_prev):
    """First-order Taylor lower bound of alpha^2 + rho^2 at the expansion
    point; satisfies g <= alpha^2 + rho^2 with slack equal to the squared
    displacement."""
    return (alpha_prev * alpha_prev + rho_prev * rho_prev
            + 2.0 * alpha_prev * (alpha - alpha_prev)
            + 2.0 * rho_prev * (rho - rho_prev))


def sinr_surrogate_value(alpha_n, rho_n, j, alpha_prev_n, rho_prev_n, h_lin, gamma_min):
    """Constraint value (gamma/2h_j)[(alpha_j+rho_j)^2 - g] - f_j(rho) <= 0
    for one (slot, station) pair. alpha_n, rho_n are full J-vectors."""
    a = float(alpha_n[j])
    r = float(rho_n[j])
    g = bilinear_lower_bound(a, r, float(alpha_prev_n[j]), float(rho_prev_n[j]))
    quad = (a + r) ** 2 - g
    return (gamma_min / (2.0 * h_lin[j])) * quad - model.f_j(rho_n, j, h_lin)


def sinr_original_violation(alpha_n, rho_n, j, h_lin, gamma_min):
    """Violation of the pre-linearization constraint
    f_j(rho) >= (gamma/h_j) alpha_j rho_j (positive = violated)."""
    return (gamma_min / h_lin[j]) * float(alpha_n[j]) * float(rho_n[j]) - model.f_j(rho_n, j, h_lin)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _equalities(layout: Layout, exp: TrajectoryIterate, ss):
    N, J = layout.N, layout.J
    Tc = ss.T_c
    rows = []
    rhs = []

    def row():
        r = np.zeros(layout.n_vars)
        rows.append(r)
        return r

    for n in range(1, N + 1):
        for d in range(2):
            r = row()
            r[layout.iQ(n) + d] = 1.0
            r[layout.iQ(n - 1) + d] = -1.0
            r[layout.iv(n - 1) + d] = -Tc
            r[layout.ia(n - 1) + d] = -0.5 * Tc * Tc
            rhs.append(0.0)
        for d in range(2):
            r = row()
            r[layout.iv(n) + d] = 1.0
            r[layout.iv(n - 1) + d] = -1.0
            r[layout.ia(n - 1) + d] = -Tc
            rhs.append(0.0)
    for d in range(2):
        r = row()
        r[layout.iQ(0) + d] = 1.0
        rhs.append(ss.q_start[d])
    for d in range(2):
        r = row()
        r[layout.iQ(N) + d] = 1.0
        rhs.append(ss.q_final[d])
    for d in range(2):
        r = row()
        r[layout.iv(0) + d] = 1.0
        rhs.append(ss.v0[d])
    for n in range(1, N + 1):
        r = row()
        for j in range(J):
            r[layout.ialpha(n, j)] = 1.0
        rhs.append(1.0)
    # affine squared-distance links, expanded at exp.Q
    H2 = ss.altitude_H * ss.altitude_H
    for n in range(1, N + 1):
        for j in range(J):
            g = exp.Q[n] - ss.stations_xy[j]
            r = row()
            r[layout.irho(n, j)] = 1.0
            r[layout.iQ(n)] = -2.0 * g[0]
            r[layout.iQ(n) + 1] = -2.0 * g[1]
            rhs.append(float(g @ g) + H2 - 2.0 * float(g @ exp.Q[n]))
    return np.array(rows), np.array(rhs)


def assemble(exp: TrajectoryIterate, ss, options: SubproblemOptions = None) -> AssembledSubproblem:
    """Build the convex subproblem at expansion point `exp` (scaled units)
    and a strictly interior warm start derived from it."""
    opt = options or SubproblemOptions()
    N, J = exp.N, exp.J
    layout = Layout(N=N, J=J)
    L = ss.length_scale
    theta_min = opt.theta_min / L
    eps_v = opt.eps_v / L
    rho_min = (opt.rho_min_factor * ss.altitude_H) ** 2
    lam = ss.penalty_lambda
    gamma = ss.gamma_min
    use_sinr = gamma > 0
    h = ss.h_lin
    Tc = ss.T_c

    A, b = _equalities(layout, exp, ss)

    # constraint bookkeeping -------------------------------------------------
    names = []
    names += [f"speed[{n}]" for n in range(N + 1)]
    names += [f"accel[{n}]" for n in range(N)]
    names += [f"theta_speed[{n}]" for n in range(N)]
    if use_sinr:
        names += [f"sinr[{n},{j}]" for n in range(1, N + 1) for j in range(J)]
    # with a single station the simplex equality pins alpha to 1, so the
    # bound inequalities would be active everywhere and are dropped
    bound_alpha = J > 1
    if bound_alpha:
        names += [f"alpha_lo[{n},{j}]" for n in range(1, N + 1) for j in range(J)]
        names += [f"alpha_hi[{n},{j}]" for n in range(1, N + 1) for j in range(J)]
    names += [f"theta_lo[{n}]" for n in range(N)]
    names += [f"rho_lo[{n},{j}]" for n in range(1, N + 1) for j in range(J)]
    if opt.trust_region is not None:
        names += [f"trust[{n}]" for n in range(1, N + 1)]

    vmax2 = ss.v_max**2
    amax2 = ss.a_max**2
    v_bar = exp.v.copy()
    alpha_bar = exp.alpha.copy()
    rho_bar = exp.rho.copy()
    Q_bar = exp.Q.copy()
    # scale factor 2h/gamma turns the SINR surrogate into an O(1) constraint
    k_sinr = (2.0 * h / gamma) if use_sinr else None
    tr2 = None if opt.trust_region is None else (opt.trust_region / L) ** 2

    def split(x):
        return layout.unpack(x)

    def objective(x):
        it = split(x)
        val = 0.0
        for n in range(N):
            val += model.smoothed_power_value(it.v[n], it.a[n], it.theta[n],
                                              ss.c1, ss.c2, ss.gravity_g, eps_v)
        val += penalty_surrogate(it.alpha, alpha_bar, lam)
        return val

    def objective_grad(x):
        it = split(x)
        g = np.zeros(layout.n_vars)
        for n in range(N):
            pg, _ = model.power_gradient_hessian(it.v[n], it.a[n], it.theta[n],
                                                 ss.c1, ss.c2, ss.gravity_g, eps_v)
            g[layout.iv(n):layout.iv(n) + 2] += pg[0:2]
            g[layout.ia(n):layout.ia(n) + 2] += pg[2:4]
            g[layout.itheta(n)] += pg[4]
        for n in range(1, N + 1):
            for j in range(J):
                g[layout.ialpha(n, j)] += lam * (1.0 - 2.0 * alpha_bar[n - 1, j])
        return g

    def objective_hess(x):
        it = split(x)
        Hm = np.zeros((layout.n_vars, layout.n_vars))
        for n in range(N):
            _, ph = model.power_gradient_hessian(it.v[n], it.a[n], it.theta[n],
                                                 ss.c1, ss.c2, ss.gravity_g, eps_v)
            idx = np.r_[layout.iv(n):layout.iv(n) + 2,
                        layout.ia(n):layout.ia(n) + 2,
                        layout.itheta(n)]
            Hm[np.ix_(idx, idx)] += ph
        return Hm

    def ineq(x):
        it = split(x)
        vals = []
        vals.extend(np.einsum("ij,ij->i", it.v, it.v) - vmax2)
        vals.extend(np.einsum("ij,ij->i", it.a, it.a) - amax2)
        for n in range(N):
            vals.append(theta_speed_constraint(it.theta[n], it.v[n], v_bar[n]))
        if use_sinr:
            for n in range(1, N + 1):
                for j in range(J):
                    a_j = it.alpha[n - 1, j]
                    r_j = it.rho[n - 1, j]
                    gb = bilinear_lower_bound(a_j, r_j, alpha_bar[n - 1, j], rho_bar[n - 1, j])
                    fj = model.f_j(it.rho[n - 1], j, h)
                    vals.append((a_j + r_j) ** 2 - gb - k_sinr[j] * fj)
        if bound_alpha:
            vals.extend(-it.alpha.ravel())
            vals.extend(it.alpha.ravel() - 1.0)
        vals.extend(theta_min - it.theta)
        vals.extend(rho_min - it.rho.ravel())
        if tr2 is not None:
            for n in range(1, N + 1):
                d = it.Q[n] - Q_bar[n]
                vals.append(float(d @ d) - tr2)
        return np.array(vals)

    def ineq_jac(x):
        it = split(x)
        Jm = np.zeros((len(names), layout.n_vars))
        r = 0
        for n in range(N + 1):
            Jm[r, layout.iv(n):layout.iv(n) + 2] = 2.0 * it.v[n]
            r += 1
        for n in range(N):
            Jm[r, layout.ia(n):layout.ia(n) + 2] = 2.0 * it.a[n]
            r += 1
        for n in range(N):
            Jm[r, layout.itheta(n)] = 2.0 * it.theta[n]
            Jm[r, layout.iv(n):layout.iv(n) + 2] = -2.0 * v_bar[n]
            r += 1
        if use_sinr:
            for n in range(1, N + 1):
                rho_n = it.rho[n - 1]
                for j in range(J):
                    a_j = it.alpha[n - 1, j]
                    r_j = rho_n[j]
                    Jm[r, layout.ialpha(n, j)] = 2.0 * (a_j + r_j) - 2.0 * alpha_bar[n - 1, j]
                    Jm[r, layout.irho(n, j)] = 2.0 * (a_j + r_j) - 2.0 * rho_bar[n - 1, j]
                    fg, _ = model.f_j_gradient_hessian(rho_n, j, h)
                    others = [k for k in range(J) if k != j]
                    for idx_k, k in enumerate(others):
                        Jm[r, layout.irho(n, k)] -= k_sinr[j] * fg[idx_k]
                    r += 1
        if bound_alpha:
            for n in range(1, N + 1):
                for j in range(J):
                    Jm[r, layout.ialpha(n, j)] = -1.0
                    r += 1
            for n in range(1, N + 1):
                for j in range(J):
                    Jm[r, layout.ialpha(n, j)] = 1.0
                    r += 1
        for n in range(N):
            Jm[r, layout.itheta(n)] = -1.0
            r += 1
        for n in range(1, N + 1):
            for j in range(J):
                Jm[r, layout.irho(n, j)] = -1.0
                r += 1
        if tr2 is not None:
            for n in range(1, N + 1):
                Jm[r, layout.iQ(n):layout.iQ(n) + 2] = 2.0 * (it.Q[n] - Q_bar[n])
                r += 1
        return Jm

    def ineq_hess(x, w):
        it = split(x)
        Hm = np.zeros((layout.n_vars, layout.n_vars))
        r = 0
        for n in range(N + 1):
            Hm[layout.iv(n), layout.iv(n)] += 2.0 * w[r]
            Hm[layout.iv(n) + 1, layout.iv(n) + 1] += 2.0 * w[r]
            r += 1
        for n in range(N):
            Hm[layout.ia(n), layout.ia(n)] += 2.0 * w[r]
            Hm[layout.ia(n) + 1, layout.ia(n) + 1] += 2.0 * w[r]
            r += 1
        for n in range(N):
            Hm[layout.itheta(n), layout.itheta(n)] += 2.0 * w[r]
            r += 1
        if use_sinr:
            for n in range(1, N + 1):
                rho_n = it.rho[n - 1]
                for j in range(J):
                    ia_ = layout.ialpha(n, j)
                    ir_ = layout.irho(n, j)
                    Hm[ia_, ia_] += 2.0 * w[r]
                    Hm[ir_, ir_] += 2.0 * w[r]
                    Hm[ia_, ir_] += 2.0 * w[r]
                    Hm[ir_, ia_] += 2.0 * w[r]
                    _, fh = model.f_j_gradient_hessian(rho_n, j, h)
                    others = [layout.irho(n, k) for k in range(J) if k != j]
                    Hm[np.ix_(others, others)] -= w[r] * k_sinr[j] * fh
                    r += 1
        r += (2 * N * J if bound_alpha else 0) + N + N * J  # bounds are linear
        if tr2 is not None:
            for n in range(1, N + 1):
                Hm[layout.iQ(n), layout.iQ(n)] += 2.0 * w[r]
                Hm[layout.iQ(n) + 1, layout.iQ(n) + 1] += 2.0 * w[r]
                r += 1
        return Hm

    problem = SmoothConvexProblem(
        n=layout.n_vars,
        objective=objective,
        objective_grad=objective_grad,
        objective_hess=objective_hess,
        A=A, b=b,
        ineq=ineq, ineq_jac=ineq_jac, ineq_hess=ineq_hess,
        constraint_names=names,
    )

    # expansion point must be feasible for its own subproblem
    x_exp = layout.pack(exp)
    c_exp = problem.eval_ineq(x_exp)
    worst = int(np.argmax(c_exp))
    if c_exp[worst] > 1e-8:
        raise AssemblyError(f"expansion point violates {names[worst]} by {c_exp[worst]:.3e}")
    eq_res = np.max(np.abs(A @ x_exp - b))
    if eq_res > 1e-6:
        raise AssemblyError(f"expansion point violates an equality by {eq_res:.3e}")

    warm = _interior_warm_start(layout, exp, problem, ss, theta_min, opt.interior_delta)
    return AssembledSubproblem(problem=problem, warm_start=warm, layout=layout,
                               expansion=exp, options=opt)


def _interior_warm_start(layout, exp, problem, ss, theta_min, delta):
    ws = exp.copy()
    J = layout.J
    ws.alpha = (1.0 - delta) * ws.alpha + delta / J
    lin_speed = np.sqrt(np.einsum("ij,ij->i", exp.v[:layout.N], exp.v[:layout.N]))
    theta_cap = lin_speed * (1.0 - delta)
    floor = theta_min * (1.0 + delta)
    if np.any(theta_cap <= floor):
        n_bad = int(np.argmin(theta_cap - floor))
        raise AssemblyError(
            f"slot {n_bad} speed {lin_speed[n_bad]:.3e} too close to theta_min "
            f"{theta_min:.3e} for a strictly interior warm start")
    ws.theta = np.minimum(np.maximum(ws.theta, floor), theta_cap)
    x = layout.pack(ws)
    c = problem.eval_ineq(x)
    worst = int(np.argmax(c))
    if c[worst] >= -1e-12:
        raise AssemblyError(
            f"warm start not strictly interior: {problem.constraint_names[worst]} = {c[worst]:.3e}")
    return x
