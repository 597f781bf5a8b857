"""Barrier interior-point solver for smooth convex problems.

Handles problems of the form

    minimize    f(x)
    subject to  A x = b
                c_i(x) <= 0,  i = 1..m

where f and every c_i are convex and twice differentiable. The warm start
must satisfy the equalities (to 1e-6) and lie strictly inside every
inequality. Each barrier stage runs infeasible-start Newton on

    t * f(x) - sum_i log(-c_i(x))    s.t.  A x = b

with a fraction-to-boundary step cap and a backtracking line search on the
KKT residual norm; the barrier weight t is multiplied by a fixed factor per
stage until the per-constraint duality gap 1/t reaches the KKT tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class SolverConfig:
    barrier_mu_factor: float = 10.0
    initial_barrier_weight: float = 1.0
    kkt_tolerance: float = 1e-8
    max_newton_per_stage: int = 50
    armijo_sigma: float = 0.01
    backtrack_beta: float = 0.5
    fraction_to_boundary: float = 0.995

    def __post_init__(self):
        for name in ("barrier_mu_factor", "initial_barrier_weight", "kkt_tolerance",
                     "max_newton_per_stage", "armijo_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack_beta < 1:
            raise ValueError("backtrack_beta must be in (0,1)")
        if not 0 < self.fraction_to_boundary < 1:
            raise ValueError("fraction_to_boundary must be in (0,1)")


@dataclass
class SmoothConvexProblem:
    """Callback-style problem definition. `hess_ineq(x, w)` must return the
    weighted sum of inequality-constraint Hessians, sum_i w_i * hess(c_i)."""

    n: int
    objective: Callable[[np.ndarray], float]
    objective_grad: Callable[[np.ndarray], np.ndarray]
    objective_hess: Callable[[np.ndarray], np.ndarray]
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    ineq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_hess: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    constraint_names: list = field(default_factory=list)

    @property
    def n_eq(self) -> int:
        return 0 if self.A is None else self.A.shape[0]

    def eval_ineq(self, x):
        if self.ineq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.ineq(x), dtype=float))


@dataclass
class SolverResult:
    x_star: np.ndarray
    objective: float
    status: str  # optimal | max_iterations | numerical_failure
    kkt_residuals: dict
    newton_iterations_total: int
    multipliers: dict = field(default_factory=dict)
    message: str = ""


def kkt_residuals(problem: SmoothConvexProblem, x, multipliers) -> dict:
    """KKT residual record at (x, multipliers). `multipliers` is a dict with
    keys 'nu' (equalities) and 'lam' (inequalities), either may be absent."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(multipliers.get("nu", np.zeros(problem.n_eq)), dtype=float)
    grad = problem.objective_grad(x).copy()
    if problem.A is not None and nu.size:
        grad += problem.A.T @ nu
    c = problem.eval_ineq(x)
    lam = np.asarray(multipliers.get("lam", np.zeros(c.size)), dtype=float)
    if c.size:
        grad += problem.ineq_jac(x).T @ lam
    res = {
        "stationarity": float(np.max(np.abs(grad))) if grad.size else 0.0,
        "primal_eq": float(np.max(np.abs(problem.A @ x - problem.b))) if problem.n_eq else 0.0,
        "primal_ineq": float(np.max(np.maximum(c, 0.0))) if c.size else 0.0,
        "complementarity": float(np.max(np.abs(lam * c))) if c.size else 0.0,
    }
    return res


def _kkt_solve(H, A, r_dual, r_pri):
    """Solve the bordered Newton system; on factorization trouble, add
    diagonal regularization 1e-10 doubling up to 1e-2, then give up."""
    n = H.shape[0]
    p = 0 if A is None else A.shape[0]
    reg = 0.0
    while True:
        if p:
            M = np.zeros((n + p, n + p))
            M[:n, :n] = H + reg * np.eye(n)
            M[:n, n:] = A.T
            M[n:, :n] = A
            M[n:, n:] = -reg * np.eye(p)
            rhs = np.concatenate([-r_dual, -r_pri])
        else:
            M = H + reg * np.eye(n)
            rhs = -r_dual
        try:
            sol = np.linalg.solve(M, rhs)
            if np.all(np.isfinite(sol)):
                return sol[:n], (sol[n:] if p else np.zeros(0)), reg
        except np.linalg.LinAlgError:
            pass
        reg = 1e-10 if reg == 0.0 else reg * 2.0
        if reg > 1e-2:
            return None, None, reg


def solve(problem: SmoothConvexProblem, warm_start, cfg: SolverConfig = None) -> SolverResult:
    cfg = cfg or SolverConfig()
    x = np.array(warm_start, dtype=float)
    m = problem.eval_ineq(x).size
    p = problem.n_eq

    def fail(msg, iters=0):
        return SolverResult(
            x_star=x, objective=float(problem.objective(x)), status="numerical_failure",
            kkt_residuals=kkt_residuals(problem, x, {"nu": np.zeros(p), "lam": np.zeros(m)}),
            newton_iterations_total=iters, message=msg,
        )

    c0 = problem.eval_ineq(x)
    if m and np.max(c0) > -1e-12:
        return fail(f"warm start not strictly interior: max c = {np.max(c0):.3e} "
                    f"({_worst_name(problem, c0)})")
    if p and np.max(np.abs(problem.A @ x - problem.b)) > 1e-6:
        return fail("warm start violates linear equalities beyond 1e-6")

    t = cfg.initial_barrier_weight
    nu = np.zeros(p)
    total_newton = 0

    def residuals(x, nu, t):
        grad = t * problem.objective_grad(x)
        c = problem.eval_ineq(x)
        if m:
            Jc = problem.ineq_jac(x)
            grad = grad + Jc.T @ (1.0 / (-c))
        else:
            Jc = None
        if p:
            r_dual = grad + problem.A.T @ nu
            r_pri = problem.A @ x - problem.b
        else:
            r_dual, r_pri = grad, np.zeros(0)
        return r_dual, r_pri, c, Jc

    while True:
        inner_tol = cfg.kkt_tolerance * max(1.0, t) * 0.5
        stall = 0
        prev_norm = np.inf
        for _ in range(cfg.max_newton_per_stage):
            r_dual, r_pri, c, Jc = residuals(x, nu, t)
            if not (np.all(np.isfinite(r_dual)) and np.all(np.isfinite(r_pri))):
                return fail("non-finite KKT residual (dual/primal block)", total_newton)
            norm0 = np.sqrt(float(r_dual @ r_dual) + float(r_pri @ r_pri))
            # floating-point noise floor of the dual residual evaluation:
            # cancellations between t*grad(f) and the barrier gradient limit
            # the achievable absolute residual
            scale = t * np.max(np.abs(problem.objective_grad(x)), initial=1.0)
            if m:
                scale += np.max(np.abs(Jc.T @ (1.0 / (-c))), initial=0.0)
            noise_floor = 64.0 * np.finfo(float).eps * scale
            if np.max(np.abs(r_dual), initial=0.0) <= max(inner_tol, noise_floor) and \
               np.max(np.abs(r_pri), initial=0.0) <= min(1e-9, cfg.kkt_tolerance):
                break
            stall = stall + 1 if norm0 > 0.97 * prev_norm else 0
            if stall >= 4:
                break
            prev_norm = norm0
            H = t * problem.objective_hess(x)
            if m:
                inv_c = 1.0 / (-c)
                H = H + (Jc * (inv_c**2)[:, None]).T @ Jc + problem.ineq_hess(x, inv_c)
            dx, dnu, reg = _kkt_solve(H, problem.A if p else None, r_dual, r_pri)
            if dx is None:
                return fail("KKT factorization failed beyond max regularization", total_newton)
            # fraction-to-boundary: shrink until strictly interior
            s = 1.0
            if m:
                for _ in range(80):
                    c_trial = problem.eval_ineq(x + s * dx)
                    if np.all(c_trial < (1.0 - cfg.fraction_to_boundary) * c):
                        break
                    s *= cfg.backtrack_beta
                else:
                    return fail("line search could not stay interior", total_newton)
            # Armijo backtracking on the residual norm
            accepted = False
            for _ in range(60):
                x_trial = x + s * dx
                nu_trial = nu + s * dnu if p else nu
                r_d, r_p, c_t, _ = residuals(x_trial, nu_trial, t)
                norm_t = np.sqrt(float(r_d @ r_d) + float(r_p @ r_p))
                if np.isfinite(norm_t) and norm_t <= (1.0 - cfg.armijo_sigma * s) * norm0:
                    accepted = True
                    break
                s *= cfg.backtrack_beta
            if not accepted:
                # residual cannot be decreased further at this stage; treat the
                # current point as the stage solution and move on
                total_newton += 1
                break
            x, nu = x_trial, nu_trial
            total_newton += 1
        if m == 0 or 1.0 / t <= cfg.kkt_tolerance:
            break
        t *= cfg.barrier_mu_factor

    c_fin = problem.eval_ineq(x)
    lam = 1.0 / (t * (-c_fin)) if m else np.zeros(0)
    nu_orig = nu / t if p else np.zeros(0)
    x, nu_orig, lam, polish_iters = _polish(problem, x, nu_orig, lam)
    total_newton += polish_iters
    res = kkt_residuals(problem, x, {"nu": nu_orig, "lam": lam})
    status = "optimal" if all(v <= cfg.kkt_tolerance * (1 + 1e-12) for v in res.values()) else "max_iterations"
    return SolverResult(
        x_star=x, objective=float(problem.objective(x)), status=status,
        kkt_residuals=res, newton_iterations_total=total_newton,
        multipliers={"nu": nu_orig, "lam": lam},
    )


def _polish(problem, x, nu, lam, max_iter=30, max_rounds=8):
    """Active-set crossover: Newton-solve the exact KKT equations for the
    constraints the barrier identifies as active (multiplier exceeding
    slack). The guessed active set is corrected iteratively: constraints
    whose multipliers come out negative are dropped, violated inactive
    constraints are added. Falls back to the barrier point if no corrected
    set yields a feasible improvement of the residual record."""
    c = problem.eval_ineq(x)
    m = c.size
    p = problem.n_eq
    n = problem.n
    if m == 0 and p == 0:
        return x, nu, lam, 0
    active = np.where(lam > -c)[0] if m else np.array([], dtype=int)
    base = kkt_residuals(problem, x, {"nu": nu, "lam": lam})
    iters = 0
    for _ in range(max_rounds):
        na = active.size
        xp, nup = x.copy(), nu.copy()
        lam_a = lam[active].copy()
        failed = False
        for _ in range(max_iter):
            g = problem.objective_grad(xp).copy()
            if p:
                g += problem.A.T @ nup
            if m:
                Jall = problem.ineq_jac(xp)
                Ja = Jall[active]
                g += Ja.T @ lam_a
            r2 = (problem.A @ xp - problem.b) if p else np.zeros(0)
            r3 = problem.eval_ineq(xp)[active] if na else np.zeros(0)
            rnorm = max(np.max(np.abs(g), initial=0.0),
                        np.max(np.abs(r2), initial=0.0),
                        np.max(np.abs(r3), initial=0.0))
            if rnorm <= 1e-13 * max(1.0, np.max(np.abs(problem.objective_grad(xp)))):
                break
            H = problem.objective_hess(xp).copy()
            if na:
                w = np.zeros(m)
                w[active] = lam_a
                H += problem.ineq_hess(xp, w)
            K = np.zeros((n + p + na, n + p + na))
            K[:n, :n] = H
            rhs = np.concatenate([-g, -r2, -r3])
            if p:
                K[:n, n:n + p] = problem.A.T
                K[n:n + p, :n] = problem.A
            if na:
                K[:n, n + p:] = Ja.T
                K[n + p:, :n] = Ja
            try:
                d = np.linalg.solve(K + 1e-14 * np.eye(K.shape[0]), rhs)
            except np.linalg.LinAlgError:
                failed = True
                break
            if not np.all(np.isfinite(d)):
                failed = True
                break
            xp = xp + d[:n]
            if p:
                nup = nup + d[n:n + p]
            lam_a = lam_a + d[n + p:]
            iters += 1
        if failed:
            return x, nu, lam, iters
        if na and np.min(lam_a) < -1e-12:
            # wrongly guessed active: drop and retry with the smaller set
            active = active[lam_a >= -1e-12]
            continue
        lam_p = np.zeros(m)
        if na:
            lam_p[active] = np.maximum(lam_a, 0.0)
        c_p = problem.eval_ineq(xp) if m else np.zeros(0)
        if m:
            mask = np.ones(m, dtype=bool)
            mask[active] = False
            violated = np.where(mask & (c_p > 1e-12))[0]
            if violated.size:
                # wrongly guessed inactive: add the worst violator and retry
                worst = violated[np.argmax(c_p[violated])]
                active = np.sort(np.append(active, worst))
                continue
            if np.any(c_p[mask] > 0):
                return x, nu, lam, iters
        polished = kkt_residuals(problem, xp, {"nu": nup, "lam": lam_p})
        if max(polished.values()) <= max(base.values()):
            return xp, nup, lam_p, iters
        return x, nu, lam, iters
    return x, nu, lam, iters


def _worst_name(problem, c):
    i = int(np.argmax(c))
    if problem.constraint_names and i < len(problem.constraint_names):
        return problem.constraint_names[i]
    return f"constraint[{i}]"


def derivative_check(problem: SmoothConvexProblem, x, step=1e-5) -> dict:
    """Compare analytic derivatives against central finite differences at x.
    Steps are relative to each coordinate's magnitude. Returns the max
    relative error per block."""
    x = np.asarray(x, dtype=float)
    n = x.size
    hs = step * np.maximum(1.0, np.abs(x))

    def fd_grad(fun, dim=None):
        cols = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = hs[i]
            cols.append((np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * hs[i]))
        return np.stack(cols, axis=-1)

    def rel(a_fd, a_an):
        scale = max(float(np.max(np.abs(a_an), initial=0.0)), float(np.max(np.abs(a_fd), initial=0.0)), 1e-10)
        return float(np.max(np.abs(a_an - a_fd), initial=0.0)) / scale

    report = {}
    g_fd = fd_grad(lambda z: problem.objective(z)).ravel()
    report["objective_grad"] = rel(g_fd, problem.objective_grad(x))
    H_fd = fd_grad(lambda z: problem.objective_grad(z))
    report["objective_hess"] = rel(H_fd, problem.objective_hess(x))
    if problem.ineq is not None:
        J_fd = fd_grad(lambda z: problem.eval_ineq(z))
        report["constraint_jac"] = rel(J_fd, problem.ineq_jac(x))
        m = problem.eval_ineq(x).size
        rng = np.random.RandomState(0)
        w = rng.uniform(0.5, 1.5, size=m)
        Hc_fd = fd_grad(lambda z: problem.ineq_jac(z).T @ w)
        report["constraint_hess"] = rel(Hc_fd, problem.ineq_hess(x, w))
    report["max"] = max(report.values())
    return report
