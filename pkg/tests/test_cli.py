import json
import subprocess
import sys
from pathlib import Path

import pytest

from hitprob.cli import main, report_body, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def conf(name):
    return str(CONFIGS / f"{name}.json")


def test_compile_report():
    code, rep = run(["compile", conf("minimal")])
    assert code == 0
    assert rep["results"]["xhat0"] == [0.0]
    assert rep["config_digest"].startswith("sha256:")
    assert set(rep) >= {"subcommand", "config_digest", "seed", "results", "timings"}


def test_eval_trivial_in_is_one():
    code, rep = run(["eval", conf("trivial_in")])
    assert code == 0
    assert rep["results"]["phi"]["value"] == 1.0 and rep["results"]["phi"]["std_error"] == 0.0
    assert rep["results"]["degeneracy"] == "trivial_optimal"


def test_eval_reports_closed_form_and_agreement():
    code, rep = run(["eval", conf("halfspace_reference"), "--samples", "100000"])
    res = rep["results"]
    assert code == 0 and res["within_3se"]
    assert res["g_vs_G"]["unexplained"] == 0
    assert res["phi"]["samples"] == 100000


def test_grad_check_reference_agrees():
    code, rep = run(["grad-check", conf("halfspace_reference"), "--samples", "400000"])
    res = rep["results"]
    assert code == 0 and res["all_agree"]
    assert all("closed_form" in row for row in res["rows"])


def test_pmp_check_on_trivial_configs():
    _, rep = run(["pmp-check", conf("trivial_out")])
    assert rep["results"]["degeneracy"] == "trivial_suboptimal_certificate"


def test_pmp_check_nontrivial(tmp_path):
    ctl = tmp_path / "u.json"
    ctl.write_text(json.dumps({"grid": [0, 0.25, 0.5, 0.75, 1], "values": [[-1], [-1], [-1], [-1]]}))
    code, rep = run(["pmp-check", conf("tiny_pmp"), "--control", str(ctl), "--samples", "50000"])
    assert code == 0
    assert rep["results"]["residual"] <= 1e-10
    assert len(rep["results"]["gaps"]) == 4


def test_validation_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"spec_version": 1}))
    code, rep = run(["compile", str(bad)])
    assert code == 1
    assert rep["error"]["type"] == "ValidationError" and rep["error"]["path"] == "system"
    code, rep = run(["compile", str(tmp_path / "missing.json")])
    assert code == 1


def test_not_regular_exit_code(tmp_path):
    cfg = json.loads(Path(conf("tiny_pmp")).read_text())
    cfg["noise"] = {"kind": "product", "components": [{"kind": "uniform", "a": 0.0, "b": 2.0}, {"kind": "gaussian", "mu": 1.0, "sigma": 0.5}]}
    path = tmp_path / "u.json"
    path.write_text(json.dumps(cfg))
    ctl = tmp_path / "c.json"
    ctl.write_text(json.dumps({"grid": [0, 0.25, 0.5, 0.75, 1], "values": [[0.5]] * 4}))
    code, rep = run(["pmp-check", str(path), "--control", str(ctl), "--samples", "1000"])
    assert code == 2
    assert rep["error"]["type"] == "NotRegularError" and rep["error"]["failed_k"] == 0


def test_flags_override_run_section():
    _, rep = run(["eval", conf("halfspace_reference")])
    assert rep["seed"] == 7 and rep["results"]["phi"]["samples"] == 200000
    _, rep = run(["eval", conf("halfspace_reference"), "--seed", "3", "--samples", "1000"])
    assert rep["seed"] == 3 and rep["results"]["phi"]["samples"] == 1000


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("HITPROB_THREADS", "3")
    a = report_body(run(["eval", conf("rotation"), "--samples", "150000"])[1])
    monkeypatch.delenv("HITPROB_THREADS")
    b = report_body(run(["eval", conf("rotation"), "--samples", "150000"])[1])
    assert a == b


@pytest.mark.parametrize("sub", ["eval", "grad-check"])
def test_report_bodies_identical_across_threads(sub):
    args = [sub, conf("halfspace_reference"), "--samples", "140000"]
    a = report_body(run(args + ["--threads", "1"])[1])
    b = report_body(run(args + ["--threads", "4"])[1])
    assert a == b


def test_optimize_writes_control_and_trace(tmp_path):
    out = tmp_path / "final.json"
    code, rep = run(["optimize", conf("tiny_pmp"), "--iters", "3", "--samples", "50000", "--grad-samples", "20000", "--out", str(out)])
    assert code == 0
    saved = json.loads(out.read_text())
    assert saved["values"] == rep["results"]["control"]["values"]
    lines = (tmp_path / "final.trace.txt").read_text().splitlines()
    assert lines[0].split() == ["iter", "phi", "residual"]
    assert len(lines) == len(rep["results"]["phi_trace"]) + 1
    # the saved control loads back
    code, rep2 = run(["eval", conf("tiny_pmp"), "--control", str(out), "--samples", "50000"])
    assert code == 0 and rep2["results"]["phi"]["value"] == rep["results"]["final_phi"]["value"]


def test_examples_subcommand():
    code, rep = run(["examples", "3", "--samples", "50000"])
    assert code == 0 and list(rep["results"]) == ["3"]
    assert rep["results"]["3"]["one_sided"]["differs"]


def test_main_writes_report_file(tmp_path, capsys):
    target = tmp_path / "r.json"
    assert main(["compile", conf("minimal"), "--report", str(target)]) == 0
    assert json.loads(target.read_text())["subcommand"] == "compile"
    assert "report" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hitprob", "compile", conf("minimal")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"]["n"] == 1
