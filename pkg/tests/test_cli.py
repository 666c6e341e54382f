import json
import math
from pathlib import Path

import numpy as np
import pytest

from covert_uav.cli import OUT_ENV, main, read_csv
from covert_uav.scenario import load_scenario, scenario_hash

ROOT = Path(__file__).resolve().parents[1]
SCENARIO = ROOT / "scenarios" / "four_users.json"
SCENARIO_T120 = ROOT / "scenarios" / "four_users_T120.json"

HEADERS = {
    "trajectory.csv": "n,t_s,x_m,y_m",
    "schedule.csv": "n,user_id",
    "power.csv": "n,p_umax_dbm,p_umax_w",
    "rates.csv": "k,avg_rate_bps_hz",
    "detection.csv": "n,m,xi_star,strongest_flag",
    "iterations.csv": "r,mu,eta,phi,objective,status",
}


def _scenario_file(tmp_path, name="short.json", **edits):
    doc = json.loads(SCENARIO.read_text())
    doc["grid"]["period_s"] = edits.pop("period_s", 40.0)
    for key, value in edits.items():
        section, field = key.split("__")
        doc[section][field] = value
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def _summary(out):
    return json.loads((out / "summary.json").read_text())


def test_init_reference(tmp_path):
    out = tmp_path / "init"
    assert main(["init", "--scenario", str(SCENARIO), "--out", str(out)]) == 0
    s = _summary(out)
    assert s["mode"] == "hover_and_fly"
    assert s["tour_length_m"] == pytest.approx(932.95, abs=0.01)
    assert sorted(s["hover_slots"].values()) == [20, 21, 21, 21]
    traj = read_csv(out / "trajectory.csv")
    assert len(traj) == 240
    assert traj[0]["n"] == "1" and float(traj[1]["t_s"]) == 1.0
    assert (out / "schedule.csv").read_text().splitlines()[0] == HEADERS["schedule.csv"]


def test_init_scaled(tmp_path):
    out = tmp_path / "init"
    assert main(["init", "--scenario", str(SCENARIO_T120), "--out", str(out)]) == 0
    s = _summary(out)
    assert s["mode"] == "scaled"
    xy = np.array([[float(r["x_m"]), float(r["y_m"])] for r in read_csv(out / "trajectory.csv")])
    closed = np.vstack([xy, xy[:1]])
    # N-1 moves at full speed on the slot grid
    assert np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1)) <= 720.0 + 1e-6


def test_solve_artifacts_consistent(tmp_path):
    scen = _scenario_file(tmp_path)
    out = tmp_path / "run"
    assert main(["solve", "--scenario", str(scen), "--out", str(out)]) == 0
    for name, header in HEADERS.items():
        assert (out / name).read_text().splitlines()[0] == header
    s = _summary(out)
    assert s["status"] == "ok" and s["convergence"]["converged"]
    assert s["config_hash"] == scenario_hash(scen)
    ids = {str(u) for u in load_scenario(scen).user_ids}
    assert {r["user_id"] for r in read_csv(out / "schedule.csv")} <= ids
    rates = [float(r["avg_rate_bps_hz"]) for r in read_csv(out / "rates.csv")]
    assert min(rates) == pytest.approx(s["min_atr"], abs=1e-9)
    power = read_csv(out / "power.csv")
    for row in power:
        w = float(row["p_umax_w"])
        if w > 0:
            assert float(row["p_umax_dbm"]) == pytest.approx(10 * math.log10(w * 1e3), abs=5e-5)
    det = read_csv(out / "detection.csv")
    assert len(det) == 40 * 3
    assert sum(int(r["strongest_flag"]) for r in det) == 40
    assert min(float(r["xi_star"]) for r in det) >= 1 - 0.03 - 1e-6
    iters = read_csv(out / "iterations.csv")
    assert len(iters) == s["convergence"]["iterations"]


def test_benchmark_keeps_shaf(tmp_path):
    scen = _scenario_file(tmp_path)
    assert main(["init", "--scenario", str(scen), "--out", str(tmp_path / "i")]) == 0
    assert main(["solve", "--scenario", str(scen), "--out", str(tmp_path / "b"), "--benchmark"]) == 0
    assert (tmp_path / "i" / "trajectory.csv").read_text() == (tmp_path / "b" / "trajectory.csv").read_text()
    assert _summary(tmp_path / "b")["benchmark"] is True


def test_determinism(tmp_path):
    scen = _scenario_file(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["solve", "--scenario", str(scen), "--out", str(out)]) == 0
    for name in HEADERS:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    sa, sb = _summary(a), _summary(b)
    sa.pop("wall_time"), sb.pop("wall_time")
    assert sa == sb


def test_bad_scenario_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"users": []}')
    out = tmp_path / "o"
    assert main(["solve", "--scenario", str(bad), "--out", str(out)]) == 2
    assert _summary(out)["error"]["kind"] == "scenario"
    assert main(["init", "--scenario", str(tmp_path / "missing.json"), "--out", str(out)]) == 2


def test_infeasible_exit_3(tmp_path):
    scen = _scenario_file(tmp_path, uav__p_max_an_dbm=0.0)
    out = tmp_path / "o"
    assert main(["solve", "--scenario", str(scen), "--out", str(out)]) == 3
    err = _summary(out)["error"]
    assert err["kind"] == "covert_infeasible" and err["slot"] is not None


def test_not_converged_exit_4(tmp_path):
    scen = _scenario_file(tmp_path)
    out = tmp_path / "o"
    assert main(["solve", "--scenario", str(scen), "--out", str(out), "--max-outer", "1", "--tol-obj", "1e-12"]) == 4
    s = _summary(out)
    assert s["status"] == "error" and s["error"]["kind"] == "not_converged"


def test_env_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_runs"))
    assert main(["init", "--scenario", str(SCENARIO)]) == 0
    assert (tmp_path / "env_runs" / "summary.json").is_file()


def test_validate_exit_codes(capsys):
    assert main(["validate", "--suite", "bounds", "--samples", "200"]) == 0
    assert "[bounds]" in capsys.readouterr().out
    assert main(["validate", "--suite", "outage", "--samples", "100000"]) == 0


def test_sweep_records_failures(tmp_path):
    scen = _scenario_file(tmp_path)
    out = tmp_path / "sw"
    assert main(["sweep", "--scenario", str(scen), "--param", "covert_eps", "--values", "0.1", "0.03", "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [float(r["value"]) for r in rows] == [0.03, 0.1]
    assert all(r["status"] == "ok" for r in rows)
    assert float(rows[1]["min_atr"]) >= float(rows[0]["min_atr"]) - 1e-9
    assert (out / "covert_eps=0.03" / "summary.json").is_file()

    # a near-zero covert budget exceeds the AN cap; the failure is recorded and the sweep goes on
    out = tmp_path / "sw2"
    assert main(["sweep", "--scenario", str(scen), "--param", "covert_eps", "--values", "1e-6", "0.03", "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert rows[0]["status"] == "covert_infeasible" and rows[0]["min_atr"] == "nan"
    assert rows[1]["status"] == "ok"
