import csv
import json
import math

import numpy as np
import pytest

from monoflow.cli import main

GOLD = (1 + math.sqrt(5)) / 2


def run(tmp_path, command, cfg, name="cfg", extra=()):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out-{name}"
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    rows = list(csv.reader(path.open()))
    return rows[0], np.array(rows[1:], dtype=float)


def test_simulate_golden(tmp_path):
    code, out = run(tmp_path, "simulate", {"preset": "golden", "T": 40, "history": {"constant": 1.0}})
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert abs(s["terminal"][0] - GOLD) < 1e-4
    head, data = read_csv(out / "trajectory.csv")
    assert head == ["t", "x1"] and data[0, 0] == -1.0 and data[-1, 0] == 40.0


def test_simulate_zero_is_constant(tmp_path):
    code, out = run(tmp_path, "simulate", {"preset": "zero", "T": 5, "history": {"constant": 0.7}})
    _, data = read_csv(out / "trajectory.csv")
    assert code == 0 and np.all(data[:, 1] == 0.7)


def test_simulate_blow_up(tmp_path):
    code, out = run(tmp_path, "simulate", {"preset": "unstable-linear", "T": 80, "solver": {"blowup_cap": 1e9}})
    s = json.loads((out / "summary.json").read_text())
    assert code == 3
    # growth rate is the positive characteristic root ~0.3748, so the cap is hit near t ~ ln(1e9)/0.3748
    assert 40 < s["blowup_time"] < 80


def test_pullback_golden_and_echo(tmp_path):
    code, out = run(tmp_path, "pullback", {"preset": "golden",
                                           "pullback": {"window": [-40, 4], "step": 0.5}})
    d = json.loads((out / "diagnostics.json").read_text())
    assert code == 0 and d["converged"]
    assert max(abs(x - GOLD) for x in d["u_range"] + d["v_range"]) < 1e-6
    assert all(x >= 0 for x in d["increments_a"])
    code, out = run(tmp_path, "pullback", {"preset": "golden",
                                           "pullback": {"window": [-4, 4], "step": 0.5, "max_steps": 0}}, "echo")
    assert code == 0
    assert (out / "u.csv").read_text() == (out / "a.csv").read_text()
    assert (out / "v.csv").read_text() == (out / "b.csv").read_text()


def test_pullback_linear(tmp_path):
    code, out = run(tmp_path, "pullback", {"preset": "linear", "pullback": {"window": [-50, 4], "step": 0.5}})
    d = json.loads((out / "diagnostics.json").read_text())
    assert code == 0
    assert max(abs(x - 4 / 3) for x in d["u_range"] + d["v_range"]) < 1e-6


def test_pullback_needs_model(tmp_path):
    code, _ = run(tmp_path, "pullback", {"preset": "anti"})
    assert code == 2


def test_verify_suites(tmp_path):
    code, out = run(tmp_path, "verify", {"preset": "golden", "suite": "kamke", "pairs": 10, "T": 3}, "g")
    assert code == 0
    code, out = run(tmp_path, "verify", {"preset": "anti", "suite": "kamke", "pairs": 10, "T": 3}, "anti")
    rep = json.loads((out / "report.json").read_text())
    assert code == 1 and not rep["passed"]
    ky = next(r for r in rep["reports"] if r.get("condition") == "Ky")
    assert ky["verdict"] == "fail" and ky["witness"]
    code, out = run(tmp_path, "verify", {"preset": "alpha-zero", "suite": "assumptions-A"}, "az")
    rep = json.loads((out / "report.json").read_text())
    assert code == 1 and rep["reports"][0]["assumption"] == "A1" and rep["reports"][0]["verdict"] == "fail"


def test_distance(tmp_path):
    code, out = run(tmp_path, "distance", {"preset": "quasi", "distance": {"shifts": [0]}}, "self")
    assert code == 0 and json.loads((out / "report.json").read_text())["rows"][0]["value"] == 0.0
    code, out = run(tmp_path, "distance", {"preset": "quasi", "distance": {"translations_k": list(range(13))}})
    head, data = read_csv_labels(out / "distances.csv")
    assert head == ["label", "shift", "value"] and np.all(np.diff(data) < 0)


def read_csv_labels(path):
    rows = list(csv.reader(path.open()))
    return rows[0], np.array([float(r[2]) for r in rows[1:]])


def test_decay(tmp_path):
    code, out = run(tmp_path, "decay", {"decay": {"alpha": 1.0, "beta": 0.0, "horizon": 40}})
    d = json.loads((out / "decay.json").read_text())
    assert code == 0 and 0.99 <= d["delta"] <= 1.01
    code, _ = run(tmp_path, "decay", {"preset": "unstable-linear", "decay": {"horizon": 40}}, "unstable")
    assert code == 5


@pytest.mark.parametrize("text", ["{not json", json.dumps({"preset": "golden", "bogus": 1}),
                                  json.dumps({"preset": "nope"}), json.dumps({"preset": "golden", "T": -1}),
                                  json.dumps({"model": {"beta": 0.5, "gamma": {"kind": "wat"}}})])
def test_config_errors(tmp_path, text):
    p = tmp_path / "bad.json"
    p.write_text(text)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_inline_model(tmp_path):
    model = {"kind": "scalar", "alpha": 1.0, "beta": 0.5, "gamma": 1.1, "h": {"base": 1.0, "gain": 1.0, "shape": "sat"}}
    code, out = run(tmp_path, "simulate", {"model": model, "T": 40})
    assert code == 0 and abs(json.loads((out / "summary.json").read_text())["terminal"][0] - GOLD) < 1e-4


def test_env_overrides_out(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv("MONOFLOW_OUT", str(target))
    code, out = run(tmp_path, "simulate", {"preset": "zero", "T": 1})
    assert code == 0 and (target / "summary.json").exists() and not out.exists()


def test_byte_identical_outputs(tmp_path):
    cfg = {"preset": "quasi", "suite": "sublinearity", "histories": 3, "T": 2, "seed": 5}
    _, a = run(tmp_path, "verify", cfg, "one")
    _, b = run(tmp_path, "verify", cfg, "two")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    _, a = run(tmp_path, "simulate", {"preset": "quasi", "T": 3}, "s1")
    _, b = run(tmp_path, "simulate", {"preset": "quasi", "T": 3}, "s2")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
