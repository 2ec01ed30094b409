import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from detvec import cli

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


VERIFY_MISMATCH = """
schema = 1
command = "verify"
id = "stretch_claims_preserve"
seed = 1
pair = "un_pair(2)"

[plan]
count = 50
domain = "Sphere"
radii = [1.5]

[[maps]]
kind = "linear"
name = "stretch"
matrix = [[2, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
expected = "Preserves"
"""


def run(tmp_path, command, scenario, *extra):
    out = tmp_path / "out.json"
    code = cli.run([command, "--scenario", str(scenario), "--out", str(out), *extra])
    return code, out


def test_un_pair_scenario_exits_zero(tmp_path):
    code, out = run(tmp_path, "verify", SCENARIOS / "un_pair_2.toml")
    assert code == 0
    report = json.loads(out.read_text())
    assert report["scenario_id"] == "un_pair_2"
    assert report["seed"] == 11
    for case in report["cases"]:
        assert set(case) >= {"map", "field", "max", "mean", "argmax", "verdict"}


def test_verdict_mismatch_exits_one(tmp_path):
    code, out = run(tmp_path, "verify", write(tmp_path, VERIFY_MISMATCH))
    assert code == 1
    assert json.loads(out.read_text())["scenario_id"] == "stretch_claims_preserve"


@pytest.mark.parametrize(
    "text",
    [
        VERIFY_MISMATCH.replace('pair = "un_pair(2)"', 'chart = "Euclidean(2)"\nfields = ["[x1 +, x2]"]'),
        VERIFY_MISMATCH.replace("schema = 1", "schema = 2"),
        VERIFY_MISMATCH.replace('id = "stretch_claims_preserve"', ""),
        VERIFY_MISMATCH.replace('kind = "linear"', 'kind = "teleport"'),
        VERIFY_MISMATCH.replace('expected = "Preserves"', 'expected = "Maybe"'),
        VERIFY_MISMATCH.replace('domain = "Sphere"', 'domain = "Cube"'),
        VERIFY_MISMATCH.replace('command = "verify"', 'command = "flow"'),
        "schema = 1\nid = [",
    ],
    ids=["bad-dsl", "schema", "no-id", "map-kind", "verdict-name", "domain", "command", "toml"],
)
def test_config_errors_exit_two(tmp_path, text):
    code, _ = run(tmp_path, "verify", write(tmp_path, text))
    assert code == 2


def test_missing_out_and_missing_file_exit_two(tmp_path):
    assert cli.run(["verify", "--scenario", str(SCENARIOS / "un_pair_2.toml")]) == 2
    assert cli.run(["verify", "--scenario", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 2
    assert cli.run(["frobnicate", "--scenario", "x", "--out", "y"]) == 2


def test_numeric_failure_exits_three(tmp_path):
    text = """
schema = 1
command = "flow"
id = "blowup"
[flow]
chart = "Euclidean(1)"
field = "[x1^2]"
p0 = [1.0]
t = 2.0
tol = 1e-8
"""
    code, _ = run(tmp_path, "flow", write(tmp_path, text))
    assert code == 3


def test_counterexample(tmp_path):
    code, out = run(tmp_path, "counterexample", SCENARIOS / "counterexample_u2.toml")
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["scenario_id"] == "counterexample_u2"
    code, _ = run(tmp_path, "counterexample", SCENARIOS / "counterexample_u2.toml", "--n", "1")
    assert code == 2


def test_seed_override_and_determinism(tmp_path):
    scen = SCENARIOS / "so3_radial.toml"
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    c = tmp_path / "c.json"
    assert cli.run(["verify", "--scenario", str(scen), "--out", str(a), "--jobs", "1"]) == 0
    assert cli.run(["verify", "--scenario", str(scen), "--out", str(b), "--jobs", "3"]) == 0
    assert cli.run(["verify", "--scenario", str(scen), "--out", str(c), "--seed", "12345"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    assert json.loads(c.read_text())["seed"] == 12345


def test_jobs_environment_fallback(tmp_path, monkeypatch):
    scen = SCENARIOS / "so3_radial.toml"
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert cli.run(["verify", "--scenario", str(scen), "--out", str(a)]) == 0
    monkeypatch.setenv("DETVEC_JOBS", "4")
    assert cli.run(["verify", "--scenario", str(scen), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("DETVEC_JOBS", "many")
    assert cli.run(["verify", "--scenario", str(scen), "--out", str(b)]) == 2


def test_flow_csv(tmp_path):
    out = tmp_path / "traj.csv"
    assert cli.run(["flow", "--scenario", str(SCENARIOS / "flow_rotation.toml"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    last = np.array([float(v) for v in lines[-1].split(",")])
    assert last[0] == pytest.approx(np.pi / 2)
    assert np.max(np.abs(last[1:] - [0.0, 1.0])) < 1e-8


def test_invariants_dense_nullspace(tmp_path):
    code, out = run(tmp_path, "invariants", SCENARIOS / "invariants_so3.toml")
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["dimension"] == 3
    code, out = run(tmp_path, "dense", SCENARIOS / "dense_su2.toml")
    assert code == 0
    code, out = run(tmp_path, "nullspace", SCENARIOS / "nullspace_k1s1.toml")
    assert code == 0
    assert json.loads(out.read_text())["dimension"] == 2


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "o.json"
    proc = subprocess.run(
        [sys.executable, "-m", "detvec.cli", "dense", "--scenario", str(SCENARIOS / "dense_su2.toml"), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
