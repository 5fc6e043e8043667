import json
import subprocess
import sys

import numpy as np
import pytest

from epkit.cli import main
from epkit.exact import enumerate_ising
from epkit.experiments import random_gaussian_instance, random_spin_instance
from epkit.models import save_model


@pytest.fixture
def spin_file(tmp_path):
    path = tmp_path / "spins.json"
    save_model(random_spin_instance(6, 0.3, 0, 0), path)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("method", ["exact", "nmf", "tap", "adatap", "ep", "lbp"])
def test_solve_methods(spin_file, method, capsys):
    code, out, _ = run(["solve", spin_file, "--method", method], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["method"] == method and d["n"] == 6 and d["converged"]
    assert len(d["means"]) == 6


def test_solve_exact_matches_library(spin_file, capsys):
    _, out, _ = run(["solve", spin_file, "--method", "exact"], capsys)
    ref = enumerate_ising(random_spin_instance(6, 0.3, 0, 0))
    assert json.loads(out)["logZ"] == ref.logZ
    np.testing.assert_array_equal(json.loads(out)["means"], ref.means)


def test_solve_latent_model(tmp_path, capsys):
    path = tmp_path / "g.json"
    save_model(random_gaussian_instance(4, 0, 0), path)
    code, out, _ = run(["solve", path, "--method", "ep"], capsys)
    assert code == 0 and json.loads(out)["converged"]
    code, _, err = run(["solve", path, "--method", "tap"], capsys)
    assert code == 2 and "Ising" in err


def test_missing_file_and_bad_model(tmp_path, capsys):
    code, _, err = run(["solve", tmp_path / "none.json"], capsys)
    assert code == 2 and "error" in err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"J": [[0, 1], [0.5, 0]], "B": [0, 0]}))
    code, _, err = run(["solve", bad], capsys)
    assert code == 2 and "symmetric" in err


def test_bad_benchmark_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topology": "ring"}))
    code, _, _ = run(["benchmark", "--config", cfg], capsys)
    assert code == 2


def test_benchmark_exit_zero_despite_nonconvergence(tmp_path, capsys):
    out = tmp_path / "b.csv"
    code, stdout, _ = run(["benchmark", "--instances", 2, "--methods", "EP,NMF", "--max-iter", 1, "--out", out], capsys)
    assert code == 0
    assert "non-converged" in out.read_text()
    assert "wall time" in stdout


def test_benchmark_config_file_and_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topology": "full", "instances": 5, "methods": ["NMF"]}))
    code, out, err = run(["benchmark", "--config", cfg, "--instances", 2, "--format", "json"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["config"]["topology"] == "full" and d["config"]["instances"] == 2
    assert [r["method"] for r in d["rows"]] == ["NMF"]
    assert "wall_time_ms" not in d["rows"][0]
    assert "wall time" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["benchmark", "--instances", 2, "--methods", "NMF,TAP,AdaTAP,EP,EP+cumulant(4)"],
        ["benchmark", "--instances", 2, "--methods", "NMF,EP", "--format", "json", "--seed", 3],
        ["adf-curve", "--n", 10, "--trials", 5, "--alpha-max", 2],
        ["adf-curve", "--n", 10, "--trials", 5, "--alpha-max", 2, "--format", "json", "--test-points", 100],
        ["gp-box", "--mc-samples", 20000],
        ["gp-box", "--mc-samples", 20000, "--format", "csv", "--seed", 5],
    ],
)
def test_outputs_are_byte_identical(argv, tmp_path, capsys):
    files = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(argv + ["--out", out], capsys)[0] == 0
        files.append(out.read_bytes())
    assert files[0] == files[1]


def test_solve_output_is_byte_identical(spin_file, capsys):
    outs = [run(["solve", spin_file, "--method", "ep", "--seed", 2], capsys)[1] for _ in range(2)]
    assert outs[0] == outs[1]


def test_console_script_entry_point(spin_file):
    proc = subprocess.run(
        [sys.executable, "-m", "epkit.cli", "solve", str(spin_file), "--method", "nmf"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert json.loads(proc.stdout)["method"] == "nmf"
