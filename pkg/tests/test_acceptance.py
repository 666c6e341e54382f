"""Acceptance criteria on the four-user reference layout, one PASS/FAIL line each."""

import functools
import json
import time
from pathlib import Path

import numpy as np

from conftest import solved
from covert_uav.cli import main
from covert_uav.detection import min_detection_error
from covert_uav.psca import PenaltySchedule, psca_solve, verify_iterate
from covert_uav.scenario import geometric_center, reference_scenario
from covert_uav.shaf import build_initial_iterate, nearest_neighbour_tour, shaf_path, scale_trajectory, shaf_trajectory
from covert_uav.validation import bounds_suite, detection_suite, outage_suite

SCENARIO = Path(__file__).resolve().parents[1] / "scenarios" / "four_users.json"


def _timed(fn, **kw):
    t0 = time.perf_counter()
    out = fn(**kw)
    return out, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def _detection():
    return _timed(detection_suite, seed=2024, n_samples=1_000_000, n_geometries=20, grid_points=10_000)


def _by_name(checks):
    return {c.name: c for c in checks}


def _detail(checks):
    return "; ".join(f"{c.name}={c.value:.3g}" for c in checks)


def test_ac1_detection_equivalence(acceptance_report):
    checks, wall = _detection()
    c = _by_name(checks)
    picked = [c[k] for k in c if "sampling" in k or "pdf" in k]
    ok = all(x.passed for x in picked) and wall <= 60.0
    acceptance_report("AC 1", ok, f"{_detail(picked)}; {wall:.1f} s")
    assert ok


def test_ac2_threshold_optimality(acceptance_report):
    checks, wall = _detection()
    c = _by_name(checks)
    picked = [c["grid minimum vs closed form"], c["grid argmin offset [grid steps]"]]
    ok = all(x.passed for x in picked)
    acceptance_report("AC 2", ok, _detail(picked))
    assert ok


def test_ac3_surrogate_bounds(acceptance_report):
    checks, wall = _timed(bounds_suite, seed=2024, n_points=1000)
    ok = all(x.passed for x in checks)
    acceptance_report("AC 3", ok, f"{_detail(checks)}; {wall:.1f} s")
    assert ok


def test_ac4_outage_calibration(acceptance_report):
    checks, wall = _timed(outage_suite, seed=2024, n_samples=1_000_000)
    ok = all(x.passed for x in checks)
    worst = max(x.value for x in checks)
    acceptance_report("AC 4", ok, f"worst {worst:.2f} std errors over {len(checks)} configs; {wall:.1f} s")
    assert ok


def test_ac5_shaf_geometry(acceptance_report):
    sc = reference_scenario()
    tour = nearest_neighbour_tour(sc)
    path = shaf_path(tour, sc.users, sc.uav.v_max_mps)
    scaled = scale_trajectory(path, 120.0, geometric_center(sc.users))
    traj, _ = shaf_trajectory(sc)
    viol = verify_iterate(build_initial_iterate(sc, traj), sc).max_violation
    ok = (
        abs(tour.length_m - 932.95) <= 0.01
        and abs(tour.t_min_s - 155.49) <= 0.01
        and abs(scaled.length() - 720.0) <= 0.1
        and viol <= 1e-9
    )
    acceptance_report(
        "AC 5", ok,
        f"tour {tour.length_m:.4f} m, T_min {tour.t_min_s:.4f} s, T=120 path {scaled.length():.4f} m, init violation {viol:.1e}",
    )
    assert ok


def test_ac6_end_to_end(acceptance_report):
    sc, init, rep = solved()
    eps = sc.rc.covert_eps
    x = rep.relaxed.x
    binary_gap = float(np.max(np.minimum(x, 1 - x)))
    floor = float(np.min(rep.min_detection_error))
    near = np.mean(np.abs(rep.min_detection_error - (1 - eps)) <= 5e-3)
    # the same statistics for the optimizer's own AN power, before re-tightening
    xi_relaxed, _ = min_detection_error(sc, rep.relaxed.q, rep.relaxed.p_umax, rep.owner)
    near_relaxed = np.mean(np.abs(xi_relaxed - (1 - eps)) <= 5e-3)
    ok = (
        rep.converged
        and len(rep.trace) <= 200
        and rep.relaxed.phi <= 1e-4
        and binary_gap <= 1e-3
        and floor >= 1 - eps - 1e-4
        and np.min(xi_relaxed) >= 1 - eps - 1e-4
        and near >= 0.9
        and near_relaxed >= 0.9
    )
    acceptance_report(
        "AC 6", ok,
        f"{len(rep.trace)} iterations, phi {rep.relaxed.phi:.1e}, binary gap {binary_gap:.1e}, "
        f"min xi {floor:.6f}, tight slots {near:.0%} (solver power {near_relaxed:.0%}), min ATR {rep.minimum_atr:.5f}",
    )
    assert ok


def test_ac7_scheme_ordering(acceptance_report):
    parts, ok = [], True
    for T in (180.0, 240.0):
        psca = solved(period_s=T)[2].minimum_atr
        bm = solved(period_s=T, benchmark=True)[2].minimum_atr
        ok &= psca > bm
        parts.append(f"T={T:g}: P-SCA {psca:.5f} vs BM {bm:.5f}")
    acceptance_report("AC 7", ok, "; ".join(parts))
    assert ok


def _mean_center_distance(sc, rep):
    return float(np.mean(np.linalg.norm(rep.trajectory - geometric_center(sc.positions), axis=1)))


def test_ac8_qualitative_orderings(acceptance_report):
    atr_eps = [solved(covert_eps=e)[2].minimum_atr for e in (0.01, 0.05, 0.1)]
    atr_T = [solved(period_s=T)[2].minimum_atr for T in (180.0, 240.0)]
    d_lo = _mean_center_distance(*solved(covert_eps=0.01)[::2])
    d_hi = _mean_center_distance(*solved(covert_eps=0.1)[::2])
    p70 = float(np.mean(solved(rho_db=-70.0)[2].power))
    p60 = float(np.mean(solved(rho_db=-60.0)[2].power))
    checks = {
        "eps": bool(np.all(np.diff(atr_eps) >= 0)),
        "T": atr_T[1] >= atr_T[0],
        "distance": d_lo < d_hi,
        "rho": p70 > p60,
    }
    ok = all(checks.values())
    acceptance_report(
        "AC 8", ok,
        f"ATR over eps {np.round(atr_eps, 5).tolist()}, over T {np.round(atr_T, 5).tolist()}, "
        f"center distance {d_lo:.2f} < {d_hi:.2f} m, mean P_umax {p70:.4f} W (-70 dB) vs {p60:.4f} W (-60 dB)",
    )
    assert ok, checks


def test_ac9_fixed_penalty_ascent(acceptance_report):
    sc = reference_scenario()
    init = build_initial_iterate(sc, shaf_trajectory(sc)[0])
    rep = psca_solve(sc, init, PenaltySchedule(growth=1.0))
    obj = np.array([e["objective"] for e in rep.trace])
    worst = float(np.min(np.diff(obj))) if len(obj) > 1 else 0.0
    ok = worst >= -1e-6
    acceptance_report("AC 9", ok, f"{len(obj)} iterations, smallest step {worst:.2e}")
    assert ok


def test_ac10_determinism(acceptance_report, tmp_path):
    runs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["solve", "--scenario", str(SCENARIO), "--out", str(r)]) for r in runs]
    names = sorted(p.name for p in runs[0].glob("*.csv"))
    same_csv = all((runs[0] / n).read_bytes() == (runs[1] / n).read_bytes() for n in names)
    summaries = []
    for r in runs:
        s = json.loads((r / "summary.json").read_text())
        s.pop("wall_time")
        summaries.append(s)
    ok = codes == [0, 0] and same_csv and summaries[0] == summaries[1] and len(names) == 6
    acceptance_report("AC 10", ok, f"{len(names)} CSV files and summary.json identical across two runs")
    assert ok
