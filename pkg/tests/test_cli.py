import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest
from scipy.stats import norm

from rwmscale import cli, diffusion
from rwmscale.config import AnalysisReport, ConfigError, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
target: {family: %s}
scaling_vector:
  groups: [{K: 1, gamma: "0"}]
component_of_interest: {group: 0}
experiment: {ell_grid: [1, 2.38, 4], d_list: [40], iterations: 5000, replicates: 2, horizon: 100, bootstrap: 20}
seed: 11
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL % "normal")
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- config -------------------------------------------------------------------


def test_config_exponents_are_exact(tmp_path):
    cfg = load_config(CONFIGS / "slow_convergence.yaml")
    assert cfg.scaling_vector.finite_terms[0].lam == Fraction(3, 4)
    with pytest.raises(ConfigError, match="exact fraction"):
        load_config({"scaling_vector": {"groups": [{"gamma": 0.5}]}})


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="Extra inputs"):
        load_config({"scaling_vector": {"groups": [{"gamma": "0"}]}, "colour": "blue"})


def test_config_needs_a_target():
    with pytest.raises(ConfigError):
        load_config({})


def test_config_reports_yaml_position(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("target: {family: normal\n  x: [\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(bad)


def test_config_group_constants_exclusive():
    with pytest.raises(ConfigError):
        load_config({"scaling_vector": {"groups": [{"gamma": "0", "K": 1, "b": 2}]}})


def test_all_shipped_configs_load():
    for path in CONFIGS.glob("*.yaml"):
        load_config(path).plan()


# -- analyze ------------------------------------------------------------------


def test_analyze_intraclass(capsys):
    code, out, _ = run(["analyze", "--config", CONFIGS / "intraclass.yaml"], capsys)
    assert code == 0
    assert "alpha=1, condition5=holds, AOAR=0.234, mixing O(d)" in out


def test_analyze_intraclass_first_component(capsys):
    code, out, _ = run(["analyze", "--config", CONFIGS / "intraclass_first.yaml"], capsys)
    assert code == 0
    assert "alpha=2" in out and "mixing O(d^2)" in out


def test_analyze_hierarchical_is_violated(capsys, tmp_path):
    code, out, _ = run(["analyze", "--config", CONFIGS / "hierarchical.yaml", "--out", tmp_path], capsys)
    assert code == 2
    assert "condition5=violated" in out and "alpha=1" in out
    header = (tmp_path / "spectrum.csv").read_text().splitlines()[0]
    assert header == "d,eigen_index,eigenvalue,fitted_exponent,cluster_id"


def test_analyze_json_round_trips(capsys, tmp_path):
    code, out, _ = run(["analyze", "--config", CONFIGS / "two_groups.yaml", "--format", "json"], capsys)
    assert code == 0
    first = AnalysisReport.model_validate_json(out)
    emitted = first.model_dump_json(by_alias=True)
    second = AnalysisReport.model_validate_json(emitted)
    assert first == second and second.model_dump_json(by_alias=True) == emitted
    assert first.schema_version == 1 and first.alpha == Fraction(3, 2)
    assert json.loads(out)["alpha"] == "3/2"


def test_analyze_bad_config_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scaling_vector:\n  groups: [{gamma: 0.25}]\n")
    code, _, err = run(["analyze", "--config", bad], capsys)
    assert code == 1 and "scaling_vector.groups.0.gamma" in err


# -- studies ------------------------------------------------------------------


def test_sweep_writes_theory_columns(capsys, small, tmp_path):
    code, out, _ = run(["sweep", "--config", small, "--out", tmp_path], capsys)
    assert code == 0 and "ell_opt" in out
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    header = lines[0].split(",")
    row = dict(zip(header, lines[2].split(",")))
    assert float(row["ell"]) == 2.38 and round(float(row["a_theory"]), 4) == 0.2340


def test_simulate_twice_identical(capsys, small, tmp_path):
    for name in ("a", "b"):
        assert run(["simulate", "--config", small, "--out", tmp_path / name], capsys)[0] == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_seed_override_changes_results(capsys, small, tmp_path):
    run(["simulate", "--config", small, "--out", tmp_path / "a"], capsys)
    run(["simulate", "--config", small, "--out", tmp_path / "b", "--seed", "12"], capsys)
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() != (tmp_path / "b" / "diagnostics.csv").read_bytes()
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 12


def test_rerun_from_manifest(capsys, small, tmp_path):
    run(["scan", "--config", small, "--out", tmp_path / "a"], capsys)
    code, _, _ = run(["rerun", "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b"], capsys)
    assert code == 0
    assert (tmp_path / "a" / "scan.csv").read_bytes() == (tmp_path / "b" / "scan.csv").read_bytes()


def test_compare_refuses_logistic(capsys, tmp_path):
    cfg = tmp_path / "logistic.yaml"
    cfg.write_text(SMALL % "logistic")
    code, _, err = run(["compare", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 1 and "normal" in err


def test_compare_outputs(capsys, small, tmp_path):
    code, out, _ = run(["compare", "--config", small, "--out", tmp_path], capsys)
    assert code == 0 and "max_dev_chain" in out
    assert (tmp_path / "trajectory_chain_d40.csv").read_text().startswith("t,z\n")
    assert (tmp_path / "acf_d40.csv").read_text().startswith("tau,acf_theory,acf_chain,acf_em\n")


def test_study_needs_output_dir(capsys, small):
    code, _, err = run(["simulate", "--config", small], capsys)
    assert code == 1 and "output directory" in err


# -- selftest and usage ---------------------------------------------------------


def test_selftest_passes(capsys):
    code, out, _ = run(["selftest"], capsys)
    assert code == 0 and "FAIL" not in out


def test_selftest_detects_perturbed_cdf(capsys, monkeypatch):
    monkeypatch.setattr(diffusion, "norm_cdf", lambda x: norm.cdf(0.9 * x))
    code, out, err = run(["selftest"], capsys)
    assert code != 0
    assert "FAIL  speed maximiser and AOAR constants" in out
    assert "AOAR" in err


def test_missing_config_prints_usage():
    proc = subprocess.run([sys.executable, "-m", "rwmscale.cli", "analyze"], capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("usage:")


def test_no_command_prints_usage():
    proc = subprocess.run([sys.executable, "-m", "rwmscale.cli"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage:" in proc.stderr
