"""Command-line harness: ``init``, ``solve``, ``validate`` and ``sweep``.

Exit codes: 0 ok, 2 validation failure (bad scenario file or failing oracle
suite), 3 infeasible scenario, 4 solver failure or no convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .detection import CovertInfeasible, min_detection_error
from .psca import PenaltySchedule, RoundingFailure, SolverFailure, psca_solve
from .scenario import (
    Scenario,
    ScenarioError,
    db_to_linear,
    geometric_center,
    load_scenario,
    scenario_hash,
    watts_to_dbm,
)
from .shaf import InsufficientFlightTime, build_initial_iterate, shaf_trajectory

log = logging.getLogger("covert_uav")

OUT_ENV = "COVERT_UAV_OUT"
EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4

SWEEP_PARAMS = ("T", "covert_eps", "rho_db")


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# artifact writers


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


def _dbm(w) -> str:
    if w <= 0:
        return "-inf"
    return f"{watts_to_dbm(w):.4f}"


def write_trajectory(out: Path, scenario: Scenario, q) -> None:
    dt = scenario.grid.slot_s
    _write_csv(out / "trajectory.csv", ["n", "t_s", "x_m", "y_m"],
               [[n + 1, _fmt(n * dt), _fmt(x), _fmt(y)] for n, (x, y) in enumerate(q)])


def write_schedule(out: Path, scenario: Scenario, owner) -> None:
    ids = scenario.user_ids
    _write_csv(out / "schedule.csv", ["n", "user_id"],
               [[n + 1, int(ids[k]) if k >= 0 else -1] for n, k in enumerate(owner)])


def write_power(out: Path, p) -> None:
    _write_csv(out / "power.csv", ["n", "p_umax_dbm", "p_umax_w"], [[n + 1, _dbm(w), _fmt(w)] for n, w in enumerate(p)])


def write_rates(out: Path, scenario: Scenario, avg) -> None:
    _write_csv(out / "rates.csv", ["k", "avg_rate_bps_hz"],
               [[int(uid), _fmt(r)] for uid, r in zip(scenario.user_ids, avg)])


def write_detection(out: Path, scenario: Scenario, q, p, owner) -> None:
    """``xi*`` of every warden for the scheduled user in each slot."""
    from .detection import xi_bar

    ids = scenario.user_ids
    H = scenario.uav.altitude_m
    rows = []
    _, strongest = min_detection_error(scenario, q, p, owner)
    for n, k in enumerate(owner):
        for m in range(scenario.n_users):
            if m == k:
                continue
            xi = 1.0 - float(xi_bar(q[n], scenario.positions[m], H, p[n], scenario.beta_bar[k, m]))
            rows.append([n + 1, int(ids[m]), _fmt(xi), int(m == strongest[n])])
    _write_csv(out / "detection.csv", ["n", "m", "xi_star", "strongest_flag"], rows)


def write_iterations(out: Path, trace) -> None:
    _write_csv(out / "iterations.csv", ["r", "mu", "eta", "phi", "objective", "status"],
               [[e["r"], _fmt(e["mu"]), _fmt(e["eta"]), _fmt(e["phi"]), _fmt(e["objective"]), e["status"]] for e in trace])


def write_summary(out: Path, summary: dict) -> None:
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# commands


def _load(path, out: Path, base: dict):
    """Load a scenario, writing a summary with the error on failure."""
    try:
        return load_scenario(path), None
    except (ScenarioError, OSError) as exc:
        write_summary(out, {**base, "status": "error", "error": {"kind": "scenario", "message": str(exc)}})
        print(f"error: {exc}", file=sys.stderr)
        return None, EXIT_VALIDATION


def _base_summary(command, scenario_path, seed):
    return {
        "command": command,
        "scenario": str(scenario_path),
        "config_hash": scenario_hash(scenario_path) if Path(scenario_path).is_file() else None,
        "seeds": {"master": seed},
    }


def cmd_init(args) -> int:
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    base = _base_summary("init", args.scenario, args.seed)
    sc, code = _load(args.scenario, out, base)
    if sc is None:
        return code
    traj, info = shaf_trajectory(sc)
    write_trajectory(out, sc, traj.waypoints)
    write_schedule(out, sc, traj.owner)
    summary = {
        **base,
        "status": "ok",
        "mode": info["mode"],
        "tour_order": list(info["tour"].order),
        "tour_length_m": info["tour"].length_m,
        "t_min_s": info["tour"].t_min_s,
        "scale": info["scale"],
        "path_length_m": traj.length(),
    }
    if "hover_slots" in info:
        summary["hover_slots"] = {int(sc.user_ids[i]): int(h) for i, h in enumerate(info["hover_slots"])}
    try:
        it = build_initial_iterate(sc, traj)
        summary["min_atr"] = it.eta
    except CovertInfeasible as exc:
        summary.update(status="error", error={"kind": "covert_infeasible", "message": str(exc), "slot": exc.slot})
        write_summary(out, summary)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    write_summary(out, summary)
    print(f"SHAF ({info['mode']}): tour {summary['tour_length_m']:.2f} m, initial min ATR {it.eta:.4f} bps/Hz -> {out}")
    return EXIT_OK


def _schedule_from(args) -> PenaltySchedule:
    d = PenaltySchedule()
    return PenaltySchedule(
        mu0=args.mu0 if args.mu0 is not None else d.mu0,
        growth=args.growth if args.growth is not None else d.growth,
        mu_max=args.mu_max if args.mu_max is not None else d.mu_max,
        max_outer=args.max_outer if args.max_outer is not None else d.max_outer,
        tol_obj=args.tol_obj if args.tol_obj is not None else d.tol_obj,
        tol_phi=args.tol_phi if args.tol_phi is not None else d.tol_phi,
    )


def run_solve(sc: Scenario, out: Path, base: dict, schedule: PenaltySchedule, benchmark: bool):
    """Full pipeline for one scenario; returns (exit code, summary)."""
    out.mkdir(parents=True, exist_ok=True)
    summary = {**base, "benchmark": benchmark, "penalty": dataclasses.asdict(schedule)}
    t0 = time.perf_counter()

    def fail(code, kind, message, trace=None, **extra):
        if trace:
            write_iterations(out, trace)
        summary.update(status="error", error={"kind": kind, "message": message, **extra}, wall_time=time.perf_counter() - t0)
        write_summary(out, summary)
        print(f"error: {message}", file=sys.stderr)
        return code, summary

    try:
        traj, info = shaf_trajectory(sc)
        init = build_initial_iterate(sc, traj)
    except (CovertInfeasible, InsufficientFlightTime) as exc:
        return fail(EXIT_INFEASIBLE, "covert_infeasible", str(exc), slot=getattr(exc, "slot", None))
    try:
        rep = psca_solve(sc, init, schedule, fixed_trajectory=benchmark)
    except SolverFailure as exc:
        return fail(EXIT_SOLVER, "solver_failure", str(exc), exc.trace)
    except RoundingFailure as exc:
        return fail(EXIT_INFEASIBLE, "rounding_failure", str(exc), exc.trace, slots=[int(s) + 1 for s in exc.slots])

    write_trajectory(out, sc, rep.trajectory)
    write_schedule(out, sc, rep.owner)
    write_power(out, rep.power)
    write_rates(out, sc, rep.avg_rates)
    write_detection(out, sc, rep.trajectory, rep.power, rep.owner)
    write_iterations(out, rep.trace)
    w0 = geometric_center(sc.positions)
    x = rep.relaxed.x
    summary.update(
        status="ok" if rep.converged else "error",
        min_atr=rep.minimum_atr,
        initial_min_atr=init.eta,
        avg_rates={int(u): float(r) for u, r in zip(sc.user_ids, rep.avg_rates)},
        convergence={
            "converged": rep.converged,
            "iterations": len(rep.trace),
            "final_phi": rep.relaxed.phi,
            "max_binary_distance": float(np.max(np.minimum(x, 1 - x))),
        },
        mean_center_distance_m=float(np.mean(np.linalg.norm(rep.trajectory - w0, axis=1))),
        mean_p_umax_w=float(np.mean(rep.power)),
        min_detection_error=float(np.min(rep.min_detection_error)),
        wall_time=time.perf_counter() - t0,
    )
    if not rep.converged:
        summary["error"] = {"kind": "not_converged", "message": f"no convergence in {schedule.max_outer} iterations"}
        write_summary(out, summary)
        return EXIT_SOLVER, summary
    write_summary(out, summary)
    return EXIT_OK, summary


def cmd_solve(args) -> int:
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    base = _base_summary("solve", args.scenario, args.seed)
    sc, code = _load(args.scenario, out, base)
    if sc is None:
        return code
    code, summary = run_solve(sc, out, base, _schedule_from(args), args.benchmark)
    if code == EXIT_OK:
        scheme = "BM" if args.benchmark else "P-SCA"
        print(f"{scheme}: min ATR {summary['min_atr']:.5f} bps/Hz after {summary['convergence']['iterations']} iterations -> {out}")
    return code


def cmd_validate(args) -> int:
    from .validation import run_suite

    suites = [args.suite] if args.suite != "all" else ["detection", "bounds", "outage"]
    failed = []
    for name in suites:
        print(f"[{name}]")
        # with --suite all the sample count sizes the Monte Carlo suites only
        samples = args.samples if name != "bounds" or args.suite == "bounds" else None
        for chk in run_suite(name, seed=args.seed, samples=samples):
            print("  " + chk.line())
            if not chk.passed:
                failed.append(f"{name}: {chk.name}")
    if failed:
        print("failing checks:\n  " + "\n  ".join(failed))
        return EXIT_VALIDATION
    return EXIT_OK


def _with_param(sc: Scenario, param: str, value: float) -> Scenario:
    if param == "T":
        return sc.replace(period_s=value)
    if param == "covert_eps":
        return sc.replace(covert_eps=value)
    return sc.replace(rho=db_to_linear(value))


def _sweep_one(job):
    sc, param, value, out, base, schedule, benchmark = job
    logging.getLogger("covert_uav").setLevel(logging.WARNING)
    try:
        code, summary = run_solve(_with_param(sc, param, value), out, {**base, "sweep": {param: value}}, schedule, benchmark)
    except Exception as exc:  # record and move on
        return value, 1, {"status": "error", "error": {"kind": type(exc).__name__, "message": str(exc)}}
    return value, code, summary


def cmd_sweep(args) -> int:
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    base = _base_summary("sweep", args.scenario, args.seed)
    sc, code = _load(args.scenario, out, base)
    if sc is None:
        return code
    values = sorted(float(v) for v in args.values)
    schedule = _schedule_from(args)
    jobs = [(sc, args.param, v, out / f"{args.param}={v:g}", base, schedule, args.benchmark) for v in values]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = []
    for value, code, s in sorted(results, key=lambda r: r[0]):
        ok = code == EXIT_OK
        nan = float("nan")
        rows.append([
            _fmt(value),
            _fmt(s.get("min_atr", nan) if ok else nan),
            _fmt(s.get("mean_center_distance_m", nan) if ok else nan),
            _fmt(s.get("mean_p_umax_w", nan) if ok else nan),
            "ok" if ok else s.get("error", {}).get("kind", "error"),
        ])
        print(f"{args.param}={value:g}: " + (f"min ATR {s['min_atr']:.5f}" if ok else f"failed ({rows[-1][-1]})"))
    _write_csv(out / "sweep.csv", ["value", "min_atr", "mean_center_distance", "mean_p_umax", "status"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_penalty_flags(p):
    p.add_argument("--mu0", type=float)
    p.add_argument("--growth", type=float)
    p.add_argument("--mu-max", type=float)
    p.add_argument("--tol-obj", type=float)
    p.add_argument("--tol-phi", type=float)
    p.add_argument("--max-outer", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="covert-uav", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="SHAF trajectory and schedule")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("solve", help="penalty SCA design (or the fixed-trajectory benchmark)")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out")
    p.add_argument("--benchmark", action="store_true", help="keep the SHAF trajectory fixed")
    p.add_argument("--seed", type=int, default=0)
    _add_penalty_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("validate", help="closed forms against independent oracles")
    p.add_argument("--suite", choices=["detection", "bounds", "outage", "all"], default="all")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--samples", type=int, help="Monte Carlo samples (points for the bounds suite)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="independent solves over one parameter")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--values", nargs="+", required=True, type=float)
    p.add_argument("--out")
    p.add_argument("--benchmark", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_penalty_flags(p)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
