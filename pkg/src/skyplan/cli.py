"""Command-line front end.

Subcommands: plan (full pipeline, writes trace + convergence artifacts),
check (feasibility verdicts), sweep (power vs SINR threshold), selftest
(numerical property probes). Exit codes are a stable contract:
0 success, 1 selftest failure, 2 connectivity violated after rounding,
3 infeasible scenario, 4 solver failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import feasibility, model, sca, surrogate
from .scenario import (Scenario, ScenarioError, default_scenarios,
                       load_scenario, scenario_to_dict)
from .solver import derivative_check

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONNECTIVITY = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_USAGE = 64

log = logging.getLogger("skyplan")


def _setup_logging():
    level = {"error": logging.ERROR, "warn": logging.WARNING,
             "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("SKYPLAN_LOG", "warn").lower(), logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)


# ---------------------------------------------------------------------------
# Deterministic serialization: floats at 12 significant digits, fixed key
# order (dict insertion order), no locale or shortest-round-trip dependence.
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("non-finite value in serialized output")
    s = format(float(x), ".12g")
    # make sure the token parses as a JSON number and round-trips as float
    if "." not in s and "e" not in s and "E" not in s and "inf" not in s:
        s += ".0"
    return s


def emit_json(obj) -> str:
    out = io.StringIO()

    def walk(o):
        if isinstance(o, dict):
            out.write("{")
            for i, (k, v) in enumerate(o.items()):
                if i:
                    out.write(",")
                out.write(json.dumps(str(k)))
                out.write(":")
                walk(v)
            out.write("}")
        elif isinstance(o, (list, tuple)):
            out.write("[")
            for i, v in enumerate(o):
                if i:
                    out.write(",")
                walk(v)
            out.write("]")
        elif isinstance(o, bool):
            out.write("true" if o else "false")
        elif isinstance(o, (int, np.integer)):
            out.write(str(int(o)))
        elif isinstance(o, (float, np.floating)):
            out.write(_fmt_float(float(o)))
        elif o is None:
            out.write("null")
        else:
            out.write(json.dumps(str(o)))

    walk(obj)
    return out.getvalue()


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def scenario_fingerprint(s: Scenario) -> str:
    canon = emit_json(scenario_to_dict(s))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Scenario loading and flag overrides
# ---------------------------------------------------------------------------

def _resolve_scenario(args) -> Scenario:
    if args.scenario and args.seed_layout:
        raise UsageError("give either a scenario path or --seed-layout, not both")
    if args.seed_layout:
        by_name = {s.name: s for s in default_scenarios()}
        if args.seed_layout not in by_name:
            raise UsageError(f"unknown bundled layout {args.seed_layout!r}; "
                             f"choose from {sorted(by_name)}")
        s = by_name[args.seed_layout]
    elif args.scenario:
        s = load_scenario(args.scenario)
    else:
        raise UsageError("a scenario path or --seed-layout is required")
    overrides = {}
    if getattr(args, "gamma_min", None) is not None:
        overrides["gamma_min"] = args.gamma_min
    if getattr(args, "penalty_lambda", None) is not None:
        overrides["penalty_lambda"] = args.penalty_lambda
    return replace(s, **overrides) if overrides else s


def _sca_config(args) -> sca.ScaConfig:
    cfg = sca.ScaConfig()
    if getattr(args, "epsilon", None) is not None:
        cfg.epsilon = args.epsilon
    if getattr(args, "max_iter", None) is not None:
        cfg.max_iterations = args.max_iter
    if getattr(args, "trust_region", None) is not None:
        cfg.trust_region = args.trust_region
    return cfg


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Artifact emission
# ---------------------------------------------------------------------------

def trace_to_json_obj(trace: sca.TrajectoryTrace, s: Scenario) -> dict:
    return {
        "scenario_fingerprint": scenario_fingerprint(s),
        "slots": [
            {
                "n": sl.n,
                "t_s": float(sl.t_s),
                "x_m": float(sl.position[0]),
                "y_m": float(sl.position[1]),
                "vx": float(sl.velocity[0]),
                "vy": float(sl.velocity[1]),
                "ax": float(sl.acceleration[0]),
                "ay": float(sl.acceleration[1]),
                "serving_gbs": sl.serving_gbs,
                "sinr": float(sl.true_sinr),
                "power_W": float(sl.slot_power),
            }
            for sl in trace.slots
        ],
        "totals": {"power_W_sum": float(trace.power_sum), "energy_J": float(trace.energy)},
        "validation": {
            "min_serving_sinr": float(trace.min_serving_sinr),
            "endpoint_error_m": float(trace.endpoint_error_m),
            "connectivity_violated": trace.connectivity_violated,
            "speed_margin": float(trace.speed_margin),
            "accel_margin": float(trace.accel_margin),
        },
        "iterations": trace.iterations,
    }


def _csv_text(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt_float(v) if isinstance(v, float) else v for v in row])
    return out.getvalue()


def write_plan_artifacts(out_dir, trace, reports, s: Scenario) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    trace_json = os.path.join(out_dir, "trace.json")
    trace_csv = os.path.join(out_dir, "trace.csv")
    conv_csv = os.path.join(out_dir, "convergence.csv")
    _atomic_write(trace_json, emit_json(trace_to_json_obj(trace, s)) + "\n")
    _atomic_write(trace_csv, _csv_text(
        ["n", "t_s", "x_m", "y_m", "vx", "vy", "ax", "ay",
         "serving_gbs", "sinr", "power_W"],
        [[sl.n, float(sl.t_s), float(sl.position[0]), float(sl.position[1]),
          float(sl.velocity[0]), float(sl.velocity[1]),
          float(sl.acceleration[0]), float(sl.acceleration[1]),
          sl.serving_gbs, float(sl.true_sinr), float(sl.slot_power)]
         for sl in trace.slots]))
    _atomic_write(conv_csv, _csv_text(
        ["iteration", "surrogate_obj", "exact_obj", "penalty_residual",
         "max_binary_gap", "wall_time"],
        [[r.iteration, float(r.surrogate_objective),
          float(r.exact_penalized_objective), float(r.penalty_residual),
          float(r.max_binary_gap), float(r.wall_time)]
         for r in reports]))
    return {"trace_json": trace_json, "trace_csv": trace_csv,
            "convergence_csv": conv_csv}


def certificate_to_obj(cert) -> dict:
    return {
        "feasible": cert.feasible,
        "method": cert.method,
        "association": list(cert.association.serving) if cert.association else None,
        "interference_bound": float(cert.interference_bound),
        "max_observed_interference": (None if cert.max_observed_interference is None
                                      else float(cert.max_observed_interference)),
        "min_waypoint_sinr": (None if cert.min_waypoint_sinr is None
                              else float(cert.min_waypoint_sinr)),
        "message": cert.message,
        "waypoints": (None if cert.waypoints is None
                      else [[float(w[0]), float(w[1])] for w in cert.waypoints]),
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_plan(args) -> int:
    s = _resolve_scenario(args)
    cfg = _sca_config(args)
    try:
        trace, reports = sca.run(s, cfg)
    except sca.InfeasibleScenarioError as exc:
        log.error("infeasible: %s", exc)
        print(emit_json({"status": "infeasible",
                         "certificate": certificate_to_obj(exc.certificate)}))
        return EXIT_INFEASIBLE
    except sca.SolverFailureError as exc:
        log.error("solver failure: %s", exc)
        print(emit_json({"status": "solver_failure", "message": str(exc),
                         "iterations_completed": len(exc.reports)}))
        return EXIT_SOLVER
    paths = write_plan_artifacts(args.out, trace, reports, s)
    summary = {
        "status": "connectivity_violated" if trace.connectivity_violated else "ok",
        "iterations": trace.iterations,
        "power_W_sum": float(trace.power_sum),
        "energy_J": float(trace.energy),
        "min_serving_sinr": float(trace.min_serving_sinr),
        "endpoint_error_m": float(trace.endpoint_error_m),
        "connectivity_violated": trace.connectivity_violated,
        "artifacts": paths,
    }
    print(emit_json(summary))
    return EXIT_CONNECTIVITY if trace.connectivity_violated else EXIT_OK


def cmd_check(args) -> int:
    s = _resolve_scenario(args)
    circle = feasibility.circle_graph_check(s, interference_bound=0.0)
    if args.oracle:
        d0 = s.vehicle.v_max * s.timing.slot_T_c
        step = max(d0 / 10.0, 1.0)
        try:
            oracle = feasibility.grid_oracle_check(s, step)
            obj = {"circle": certificate_to_obj(circle),
                   "oracle": certificate_to_obj(oracle),
                   "agreement": circle.feasible == oracle.feasible}
            feasible = oracle.feasible
        except feasibility.FeasibilityResourceError as exc:
            log.warning("oracle skipped: %s", exc)
            obj = {"circle": certificate_to_obj(circle), "oracle": None,
                   "agreement": None}
            feasible = circle.feasible
    else:
        obj = certificate_to_obj(circle)
        feasible = circle.feasible
    print(emit_json(obj))
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    s = _resolve_scenario(args)
    try:
        gammas = [float(g) for g in args.gammas.split(",") if g.strip() != ""]
    except ValueError:
        raise UsageError(f"could not parse --gammas {args.gammas!r}")
    if not gammas:
        raise UsageError("--gammas must list at least one threshold")
    gammas = sorted(gammas)
    cfg = _sca_config(args)
    rows = sca.gamma_sweep(s, gammas, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    _atomic_write(path, _csv_text(
        ["gamma", "total_power_W", "energy_J", "converged", "feasible", "iterations"],
        [[float(r.gamma),
          "" if r.total_power is None else float(r.total_power),
          "" if r.total_power is None else float(r.total_power * s.timing.slot_T_c),
          r.converged, r.feasible, r.iterations]
         for r in rows]))
    for r in rows:
        if r.message:
            log.warning("gamma=%g: %s", r.gamma, r.message)
    print(emit_json({"sweep_csv": path,
                     "rows": [{"gamma": float(r.gamma),
                               "total_power_W": (None if r.total_power is None
                                                 else float(r.total_power)),
                               "converged": r.converged,
                               "feasible": r.feasible,
                               "iterations": r.iterations}
                              for r in rows]}))
    if not any(r.total_power is not None for r in rows):
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# Self-test probes
# ---------------------------------------------------------------------------

def _fd_grad(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def probe_derivative(rng) -> str | None:
    # propulsion-power gradient/Hessian vs central differences
    for _ in range(60):
        v = rng.uniform(-2, 2, 2)
        a = rng.uniform(-1, 1, 2)
        theta = rng.uniform(0.05, 2.0)
        c1, c2, g = 0.2, 0.8, 1e-3
        z0 = np.r_[v, a, theta]

        def f(z):
            return model.smoothed_power_value(z[0:2], z[2:4], z[4], c1, c2, g, 1e-8)

        grad, hess = model.power_gradient_hessian(v, a, theta, c1, c2, g, 1e-8)
        fg = _fd_grad(f, z0, 1e-6)
        if np.max(np.abs(grad - fg)) > 1e-5 * max(1.0, np.max(np.abs(fg))):
            return "power gradient mismatch"
        fh = np.array([_fd_grad(lambda z: model.power_gradient_hessian(
            z[0:2], z[2:4], z[4], c1, c2, g, 1e-8)[0][i], z0, 1e-5)
            for i in range(5)])
        if np.max(np.abs(hess - fh)) > 1e-4 * max(1.0, np.max(np.abs(fh))):
            return "power Hessian mismatch"
    # interference-fraction gradient/Hessian
    for _ in range(60):
        J = rng.integers(2, 9)
        rho = rng.uniform(0.5, 5.0, J)
        h = rng.uniform(0.5, 5.0, J)
        j = int(rng.integers(0, J))
        others = [k for k in range(J) if k != j]

        def fj(r_others):
            r = rho.copy()
            r[others] = r_others
            return model.f_j(r, j, h)

        grad, hess = model.f_j_gradient_hessian(rho, j, h)
        fg = _fd_grad(fj, rho[others], 1e-6)
        if np.max(np.abs(grad - fg)) > 1e-5 * max(1.0, np.max(np.abs(fg))):
            return "interference-fraction gradient mismatch"
        fh = np.array([_fd_grad(lambda r: model.f_j_gradient_hessian(
            _sub(rho, others, r), j, h)[0][i], rho[others], 1e-5)
            for i in range(len(others))])
        if np.max(np.abs(hess - fh)) > 1e-4 * max(1.0, np.max(np.abs(fh))):
            return "interference-fraction Hessian mismatch"
    return None


def _sub(rho, others, r_others):
    r = rho.copy()
    r[others] = r_others
    return r


def probe_concavity(rng) -> str | None:
    for _ in range(1000):
        J = int(rng.integers(2, 9))
        rho = rng.uniform(0.1, 10.0, J)
        h = rng.uniform(0.1, 10.0, J)
        j = int(rng.integers(0, J))
        _, hess = model.f_j_gradient_hessian(rho, j, h)
        scale = np.linalg.norm(hess, 2)
        top = np.linalg.eigvalsh(hess)[-1]
        if top > 1e-8 * max(scale, 1e-300):
            return f"positive curvature {top:.3e} at J={J}"
    return None


def probe_surrogate(rng) -> str | None:
    for _ in range(100):
        # tangency of each surrogate at its expansion point
        vb = rng.uniform(-2, 2, 2)
        th = np.linalg.norm(vb)
        if abs(surrogate.theta_speed_constraint(th, vb, vb)) > 1e-9:
            return "speed-slack surrogate not tangent"
        ab, rb = rng.uniform(0.0, 1.0), rng.uniform(0.5, 5.0)
        if abs(surrogate.bilinear_lower_bound(ab, rb, ab, rb) - (ab**2 + rb**2)) > 1e-9:
            return "bilinear bound not tangent"
        lam = rng.uniform(1.0, 10.0)
        al = rng.uniform(0.0, 1.0, 4)
        if abs(surrogate.penalty_surrogate(al, al, lam)
               - surrogate.exact_penalty(al, lam)) > 1e-9:
            return "penalty surrogate not tangent"
        # surrogate feasibility implies the original constraint
        v = rng.uniform(-2, 2, 2)
        th2 = rng.uniform(0.01, 3.0)
        if surrogate.theta_speed_constraint(th2, v, vb) <= 0 and \
                float(v @ v) < th2**2 - 1e-12:
            return "speed-slack implication violated"
        # lower-bound slack equals the squared displacement
        a2, r2 = rng.uniform(0.0, 1.0), rng.uniform(0.5, 5.0)
        slack = (a2**2 + r2**2) - surrogate.bilinear_lower_bound(a2, r2, ab, rb)
        if abs(slack - ((a2 - ab)**2 + (r2 - rb)**2)) > 1e-9:
            return "bilinear slack mismatch"
        # SINR surrogate feasibility implies the original SINR constraint
        J = int(rng.integers(2, 6))
        h = rng.uniform(0.5, 5.0, J)
        gmin = rng.uniform(0.1, 3.0)
        alpha_b = rng.uniform(0.0, 1.0, J)
        rho_b = rng.uniform(0.5, 5.0, J)
        alpha = np.clip(alpha_b + rng.uniform(-0.2, 0.2, J), 0.0, 1.0)
        rho = np.maximum(rho_b + rng.uniform(-0.5, 0.5, J), 0.1)
        j = int(rng.integers(0, J))
        surr = surrogate.sinr_surrogate_value(alpha, rho, j, alpha_b, rho_b, h, gmin)
        if surr <= 0 and surrogate.sinr_original_violation(alpha, rho, j, h, gmin) > 1e-12:
            return "SINR surrogate implication violated"
    # assembled subproblem callbacks vs finite differences on a bundled map seed
    s = default_scenarios()[0]
    cert = feasibility.circle_graph_check(s, 0.0)
    it = feasibility.initial_trajectory(cert, s)
    from .scenario import nondimensionalize
    asm = surrogate.assemble(it, nondimensionalize(s))
    report = derivative_check(asm.problem, asm.warm_start)
    if report["max"] > 1e-5:
        return f"assembled subproblem derivative mismatch {report['max']:.3e}"
    return None


PROBES = {
    "derivative": probe_derivative,
    "concavity": probe_concavity,
    "surrogate": probe_surrogate,
}


def cmd_selftest(args) -> int:
    names = list(PROBES)
    if args.probes:
        names = [p.strip() for p in args.probes.split(",") if p.strip()]
        unknown = [p for p in names if p not in PROBES]
        if unknown:
            raise UsageError(f"unknown probe(s): {unknown}; choose from {list(PROBES)}")
    rng = np.random.default_rng(20260823)
    failed = []
    for name in names:
        msg = PROBES[name](rng)
        status = "PASS" if msg is None else f"FAIL ({msg})"
        print(f"{name:12s} {status}")
        if msg is not None:
            failed.append(name)
    if failed:
        print(f"selftest failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_scenario_args(p):
    p.add_argument("scenario", nargs="?", default=None,
                   help="path to a scenario JSON file")
    p.add_argument("--seed-layout", default=None,
                   help="use a bundled stand-in map (map-1 or map-2)")
    p.add_argument("--gamma-min", dest="gamma_min", type=float, default=None,
                   help="override the SINR threshold")
    p.add_argument("--lambda", dest="penalty_lambda", type=float, default=None,
                   help="override the binary-penalty factor")


def _add_sca_args(p):
    p.add_argument("--epsilon", type=float, default=None,
                   help="fractional-objective convergence tolerance")
    p.add_argument("--max-iter", type=int, default=None,
                   help="iteration cap for the outer loop")
    p.add_argument("--trust-region", type=float, default=None,
                   help="per-slot position trust region in meters")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skyplan",
                     description="Minimum-propulsion-power trajectory planning "
                                 "under an SINR connectivity constraint.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("plan", help="run the full pipeline and write artifacts")
    _add_scenario_args(p)
    _add_sca_args(p)
    p.add_argument("--out", default=".", help="artifact output directory")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("check", help="feasibility verdicts")
    _add_scenario_args(p)
    p.add_argument("--oracle", action="store_true",
                   help="also run the grid oracle and report agreement")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="power vs SINR-threshold sweep")
    _add_scenario_args(p)
    _add_sca_args(p)
    p.add_argument("--gammas", required=True,
                   help="comma-separated SINR thresholds, e.g. 0.5,1,2")
    p.add_argument("--out", default=".", help="artifact output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", help="numerical property probes")
    p.add_argument("--probes", default=None,
                   help="comma-separated subset of: " + ",".join(PROBES))
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required (plan, check, sweep, selftest)")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
