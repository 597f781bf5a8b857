import json
import os

import numpy as np
import pytest

from skyplan import cli
from skyplan.scenario import save_scenario
from tests.conftest import make_scenario


def test_emit_json_formatting():
    s = cli.emit_json({"a": 1.0 / 3.0, "b": [True, None, 2], "c": "x"})
    assert s == '{"a":0.333333333333,"b":[true,null,2],"c":"x"}'
    # 12 significant digits, not 12 decimals
    assert cli.emit_json(123456.789012345) == "123456.789012"
    assert cli.emit_json(2.0) == "2.0"
    assert json.loads(cli.emit_json({"v": 1e-30})) == {"v": 1e-30}
    with pytest.raises(ValueError):
        cli.emit_json(float("nan"))


def test_fingerprint_stable(tiny_scenario):
    f1 = cli.scenario_fingerprint(tiny_scenario)
    f2 = cli.scenario_fingerprint(tiny_scenario)
    assert f1 == f2 and len(f1) == 16
    other = make_scenario([(30.0, 10.0), (91.0, -10.0)], T=15.0, Tc=5.0,
                          q_final=(90.0, 0.0))
    assert cli.scenario_fingerprint(other) != f1


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["plan"]) == cli.EXIT_USAGE
    assert cli.main(["plan", "x.json", "--seed-layout", "map-1"]) == cli.EXIT_USAGE
    assert cli.main(["plan", "--seed-layout", "nope"]) == cli.EXIT_USAGE
    assert cli.main(["sweep", "--seed-layout", "map-1", "--gammas", ""]) == cli.EXIT_USAGE
    assert cli.main(["sweep", "--seed-layout", "map-1", "--gammas", "abc"]) == cli.EXIT_USAGE
    assert cli.main(["selftest", "--probes", "bogus"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["plan", str(tmp_path / "missing.json")]) == cli.EXIT_USAGE
    capsys.readouterr()


def test_check_bundled_map(capsys):
    code = cli.main(["check", "--seed-layout", "map-1"])
    out = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    assert out["feasible"] is True
    assert out["method"] == "circle-graph"
    assert len(out["association"]) == 10


def test_check_infeasible_still_prints_certificate(tmp_path, capsys):
    s = make_scenario([(20.0, 0.0)], h_db=40.0, gamma_min=5.0,
                      T=20.0, Tc=5.0, q_final=(40.0, 0.0))
    path = tmp_path / "bad.json"
    save_scenario(s, path)
    code = cli.main(["check", str(path)])
    out = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_INFEASIBLE
    assert out["feasible"] is False
    assert out["message"]


def test_check_oracle_agreement(tmp_path, capsys, tiny_scenario):
    path = tmp_path / "tiny.json"
    save_scenario(tiny_scenario, path)
    code = cli.main(["check", str(path), "--oracle"])
    out = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    assert out["agreement"] is True
    assert out["circle"]["feasible"] and out["oracle"]["feasible"]
    assert out["oracle"]["method"] == "grid-oracle"


def test_plan_tiny_scenario(tmp_path, capsys, tiny_scenario):
    path = tmp_path / "tiny.json"
    save_scenario(tiny_scenario, path)
    out_dir = tmp_path / "run"
    code = cli.main(["plan", str(path), "--out", str(out_dir)])
    summary = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    assert summary["status"] == "ok"
    trace = json.loads((out_dir / "trace.json").read_text())
    assert set(trace) == {"scenario_fingerprint", "slots", "totals",
                          "validation", "iterations"}
    assert len(trace["slots"]) == tiny_scenario.N
    slot = trace["slots"][0]
    assert set(slot) == {"n", "t_s", "x_m", "y_m", "vx", "vy", "ax", "ay",
                         "serving_gbs", "sinr", "power_W"}
    assert trace["validation"]["connectivity_violated"] is False
    assert trace["totals"]["power_W_sum"] == pytest.approx(
        sum(s["power_W"] for s in trace["slots"]), rel=1e-9)
    # CSV artifacts exist with one row per slot / iteration
    slots_csv = (out_dir / "trace.csv").read_text().strip().splitlines()
    assert len(slots_csv) == tiny_scenario.N + 1
    conv_csv = (out_dir / "convergence.csv").read_text().strip().splitlines()
    assert len(conv_csv) == trace["iterations"] + 1
    assert conv_csv[0] == "iteration,surrogate_obj,exact_obj,penalty_residual,max_binary_gap,wall_time"


def test_plan_infeasible_exit_code(tmp_path, capsys):
    s = make_scenario([(20.0, 0.0)], h_db=40.0, gamma_min=5.0,
                      T=20.0, Tc=5.0, q_final=(40.0, 0.0))
    path = tmp_path / "bad.json"
    save_scenario(s, path)
    code = cli.main(["plan", str(path), "--out", str(tmp_path / "o")])
    out = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_INFEASIBLE
    assert out["status"] == "infeasible"
    assert out["certificate"]["feasible"] is False


def test_plan_gamma_override(tmp_path, capsys, tiny_scenario):
    path = tmp_path / "tiny.json"
    save_scenario(tiny_scenario, path)
    code = cli.main(["plan", str(path), "--gamma-min", "0", "--out",
                     str(tmp_path / "o")])
    assert code == cli.EXIT_OK
    capsys.readouterr()


def test_sweep_csv(tmp_path, capsys, tiny_scenario):
    path = tmp_path / "tiny.json"
    save_scenario(tiny_scenario, path)
    out_dir = tmp_path / "sw"
    code = cli.main(["sweep", str(path), "--gammas", "0.5,2", "--out", str(out_dir)])
    out = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    lines = (out_dir / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "gamma,total_power_W,energy_J,converged,feasible,iterations"
    assert len(lines) == 3
    powers = [r["total_power_W"] for r in out["rows"]]
    assert powers[0] <= powers[1]


def test_selftest_filter_and_failure_naming(capsys, monkeypatch):
    assert cli.main(["selftest", "--probes", "concavity"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "concavity" in out and "derivative" not in out

    monkeypatch.setitem(cli.PROBES, "concavity", lambda rng: "injected failure")
    assert cli.main(["selftest", "--probes", "concavity"]) == cli.EXIT_SELFTEST
    captured = capsys.readouterr()
    assert "concavity" in captured.err
    assert "injected failure" in captured.out
