import json
import subprocess
import sys

import numpy as np
import pytest

from idg import cli
from idg.offline import SolutionSet, membership_residual
from idg.scenario import bundled_path
from idg.sim import Trajectory

ERRORFREE = str(bundled_path("errorfree"))


def run(*args):
    return cli.main([str(a) for a in args])


def report(path):
    return json.loads(path.read_text())


def _keys(d) -> set:
    if isinstance(d, dict):
        return set(d) | set().union(*(_keys(v) for v in d.values()))
    if isinstance(d, list):
        return set().union(*(_keys(v) for v in d)) if d else set()
    return set()


def test_generate(tmp_path):
    assert run("generate", "--scenario", ERRORFREE, "--out", tmp_path) == 0
    text = (tmp_path / "ground_truth.csv").read_text()
    assert len(text.splitlines()) == 16001
    tr = Trajectory.from_csv(text)
    assert tr.n_segments == 8
    rep = report(tmp_path / "generate_report.json")
    assert rep["schema_version"] == 1
    assert rep["seed"] == 7
    assert rep["tool"]["name"] == "idg"
    assert not _keys(rep) & {"timestamp", "created", "date", "time"}
    assert not list(tmp_path.glob("*.png"))


def test_offline_report(tmp_path):
    assert run("offline", "--scenario", ERRORFREE, "--out", tmp_path) == 0
    st = report(tmp_path / "offline_report.json")["stages"]["offline"]
    for pl in st["players"]:
        assert pl["solution_set"]["unique"] is False
        assert len(pl["solution_set"]["null_basis"]) == 1
    assert not st["partial"]
    for name in ("ground_truth.csv", "identified_laws.csv", "offline_fne.csv"):
        assert (tmp_path / name).exists()


def test_offline_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("offline", "--scenario", ERRORFREE, "--out", a) == 0
    assert run("offline", "--scenario", ERRORFREE, "--out", b) == 0
    for name in ("offline_report.json", "offline_fne.csv", "identified_laws.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_verify_ground_truth_parameters(tmp_path):
    assert run("verify", "--scenario", ERRORFREE, "--out", tmp_path) == 0
    nz = report(tmp_path / "verify_report.json")["stages"]["verify"]["verification"]["nsae"]
    assert nz["dx"] <= 1e-2


def test_verify_from_parameter_file(tmp_path):
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"alpha": [[2, 2], [2, 2]], "beta": [[2, 0, 2], [2, 0, 2]]}))
    assert run("verify", "--scenario", ERRORFREE, "--params", params, "--out", tmp_path / "o") == 0
    st = report(tmp_path / "o" / "verify_report.json")["stages"]["verify"]
    assert st["beta"][1] == [2.0, 0.0, 2.0]
    assert st["verification"]["nsae"]["dx"] <= 1e-2  # a rescaled cost has the same equilibrium


def test_online_report_closure(tmp_path):
    # the exit code follows the report's checks
    code = run("online", "--scenario", ERRORFREE, "--out", tmp_path, "--set", "online.horizon=14")
    st = report(tmp_path / "online_report.json")["stages"]["online"]
    failed = {c["name"] for c in report(tmp_path / "online_report.json")["checks"] if not c["ok"]}
    assert code == (1 if failed else 0)
    # membership recomputed from the report alone
    for i, d in enumerate(st["offline_solution_sets"]):
        s = SolutionSet.from_dict(d)
        cand = np.concatenate([st["alpha"][i], st["beta"][i]])
        assert membership_residual(s, cand) == pytest.approx(st["membership_residual"][i], rel=1e-9)
    trace = (tmp_path / "learning_trace.csv").read_text().splitlines()
    assert trace[0].startswith("t,player,theta_bar1")
    assert (tmp_path / "online_fne.csv").exists()


def test_figures_opt_in(tmp_path):
    assert run("generate", "--scenario", ERRORFREE, "--out", tmp_path, "--figures") == 0
    png = tmp_path / "ground_truth.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


@pytest.mark.parametrize("args, code", [
    (["--set", "demonstrations.h=-1"], 2),
    (["--set", "players.0.alpha=[-1, 2]"], 2),
    (["--set", "dynamics.f=[\"x1 +\", \"x2\"]"], 2),
    (["--params", "x.json"], 2),
])
def test_scenario_errors_exit_2(tmp_path, args, code, capsys):
    assert run("generate", "--scenario", ERRORFREE, "--out", tmp_path, *args) == code
    assert "scenario error" in capsys.readouterr().err
    assert not (tmp_path / "ground_truth.csv").exists()


def test_missing_scenario(tmp_path):
    assert run("offline", "--scenario", tmp_path / "nope.json", "--out", tmp_path) == 2
    assert run("offline", "--out", tmp_path) == 2


def test_check_failure_exits_1(tmp_path):
    cost = bundled_path("cost_approx")
    assert run("offline", "--scenario", cost, "--out", tmp_path) == 1
    rep = report(tmp_path / "offline_report.json")
    assert rep["ok"] is False
    assert any(not c["ok"] and "valid" in c["name"] for c in rep["checks"])


def test_runtime_failure_exits_3(tmp_path):
    # cubic drift escapes to infinity in finite time from this initial state
    code = run("generate", "--scenario", ERRORFREE, "--out", tmp_path,
               "--set", "dynamics.f=[\"x1^3\", \"x2^3\"]", "--set", "demonstrations.inits=[[5, 5]]")
    assert code == 3


def test_repro_paper_wiring(tmp_path, monkeypatch, repro_result, capsys):
    import idg.repro
    monkeypatch.setattr(idg.repro, "run_repro", lambda scenarios=None: repro_result)
    code = run("repro-paper", "--out", tmp_path)
    assert code == (0 if repro_result.ok else 1)
    table = (tmp_path / "repro_table.csv").read_text().splitlines()
    assert table[0] == "criterion,name,reference,computed,tolerance,pass,detail"
    assert len(table) == len(repro_result.rows) + 1
    rep = report(tmp_path / "repro_report.json")
    assert set(rep["stages"]["repro"]["criteria"]) == {"1", "2", "3", "4", "5", "6"}
    out = capsys.readouterr().out
    assert out.count("[PASS]") + out.count("[FAIL]") == len(repro_result.rows)


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "idg.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip().startswith("idg ")
