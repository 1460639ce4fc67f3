import json

import pytest
from click.testing import CliRunner

from bsvie_kit.cli import main

TREE = """\
problem:
  preset: coupled
grid:
  steps: 3
ensemble:
  tree: true
basis:
  kind: exact
solver:
  tol: 1.0e-13
  max_iter: 300
output:
  directory: {out}
  dumps: [ensemble, family, trace]
"""


def _write(tmp_path, text, name="cfg.yaml"):
    out = tmp_path / "out"
    path = tmp_path / name
    path.write_text(text.format(out=out))
    return path, out


def _run(*args):
    return CliRunner().invoke(main, list(args))


def test_solve_bsvie_writes_report_and_csvs(tmp_path):
    cfg, out = _write(tmp_path, TREE)
    res = _run("solve-bsvie", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["problem"]["preset"] == "coupled"
    assert report["converged"] is True
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header.startswith("iteration,diff,ratio,diff_y")
    assert (out / "family.csv").read_text().startswith("s_node,t_node,path,c0")
    assert (out / "ensemble.csv").read_text().startswith("path,node,time,x0")


def test_identical_runs_give_identical_csvs(tmp_path):
    text = TREE.replace("tree: true", "tree: false\n  n_paths: 300\n  seed: 5").replace("kind: exact", "kind: poly")
    cfg, out = _write(tmp_path, text)
    assert _run("solve-bsvie", "--config", str(cfg), "--threads", "1").exit_code == 0
    first = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    assert _run("solve-bsvie", "--config", str(cfg), "--threads", "3").exit_code == 0
    second = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    assert first == second and first


def test_seed_override_changes_paths(tmp_path):
    text = TREE.replace("tree: true", "tree: false\n  n_paths: 50").replace("kind: exact", "kind: poly")
    cfg, out = _write(tmp_path, text)
    _run("solve-bsvie", "--config", str(cfg), "--seed", "1")
    a = (out / "ensemble.csv").read_bytes()
    _run("solve-bsvie", "--config", str(cfg), "--seed", "2")
    assert (out / "ensemble.csv").read_bytes() != a
    assert json.loads((out / "report.json").read_text())["config"]["ensemble"]["seed"] == 2


def test_non_convergence_exits_one(tmp_path):
    cfg, out = _write(tmp_path, TREE.replace("max_iter: 300", "max_iter: 2"))
    res = _run("solve-bsvie", "--config", str(cfg))
    assert res.exit_code == 1
    assert json.loads((out / "report.json").read_text())["converged"] is False


def test_config_error_exits_two(tmp_path):
    cfg, _ = _write(tmp_path, "solver:\n  tolerance: 1\n")
    res = _run("solve-bsvie", "--config", str(cfg))
    assert res.exit_code == 2
    assert "solver.tolerance" in res.output


def test_missing_config_exits_two(tmp_path):
    assert _run("check-assumptions", "--config", str(tmp_path / "none.yaml")).exit_code == 2


def test_wrong_command_for_preset_exits_two(tmp_path):
    cfg, _ = _write(tmp_path, TREE)
    assert _run("solve-system", "--config", str(cfg)).exit_code == 2


def test_oracle_compare_passes(tmp_path):
    cfg, out = _write(tmp_path, TREE)
    res = _run("oracle-compare", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["worst"] <= 1e-12


def test_oracle_compare_control_requires_exponential(tmp_path):
    text = "problem:\n  preset: ti-control\ngrid:\n  steps: 3\noutput:\n  directory: {out}\n"
    cfg, _ = _write(tmp_path, text)
    assert _run("oracle-compare", "--config", str(cfg)).exit_code == 2


def test_oracle_compare_control(tmp_path):
    text = (
        "problem:\n  preset: ti-control\n  params:\n    discount: 0.0\n    discount_kind: exponential\n"
        "    reward: [-0.5, 0.3, 0.0]\ngrid:\n  steps: 3\noutput:\n  directory: {out}\n"
    )
    cfg, out = _write(tmp_path, text)
    res = _run("oracle-compare", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    assert json.loads((out / "report.json").read_text())["max_diffs"]["value"] <= 1e-10


def test_verify_lemmas_table(tmp_path):
    cfg, out = _write(tmp_path, "output:\n  directory: {out}\n")
    res = _run("verify-lemmas", "--config", str(cfg))
    assert res.exit_code == 0
    assert "0.001190476" in res.output  # 1/840
    assert "360" in res.output
    assert "1/80" in res.output


def test_check_assumptions_exit_codes(tmp_path):
    good = (
        "problem:\n  preset: quadratic-small\ngrid:\n  steps: 4\nensemble:\n  n_paths: 300\n"
        "certification:\n  eps: [1, 35, 1, 1, 1, 1]\n  c: 0.2\noutput:\n  directory: {out}\n"
    )
    cfg, _ = _write(tmp_path, good)
    res = _run("check-assumptions", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    assert "certified=True" in res.output
    bad = good.replace("preset: quadratic-small", "preset: quadratic-small\n  params: {{scale: 1.0}}")
    cfg, _ = _write(tmp_path, bad, "bad.yaml")
    assert _run("check-assumptions", "--config", str(cfg)).exit_code == 1


def test_solve_system_control_writes_policy(tmp_path):
    text = (
        "problem:\n  preset: ti-control\ngrid:\n  steps: 4\nensemble:\n  n_paths: 200\n"
        "solver:\n  max_iter: 100\noutput:\n  directory: {out}\n"
    )
    cfg, out = _write(tmp_path, text)
    res = _run("solve-system", "--config", str(cfg))
    assert res.exit_code in (0, 1)
    lines = (out / "policy.csv").read_text().splitlines()
    assert lines[0] == "node,path,action"
    assert len(lines) == 1 + 4 * 200


def test_flow_check(tmp_path):
    text = (
        "problem:\n  preset: linear-family\ngrid:\n  steps: 8\nensemble:\n  n_paths: 2000\n  seed: 3\n"
        "solver:\n  tol: 1.0e-10\noutput:\n  directory: {out}\n"
    )
    cfg, out = _write(tmp_path, text)
    res = _run("flow-check", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["within_tolerance"] and report["inflation"] > 1


def test_version():
    assert _run("--version").exit_code == 0
