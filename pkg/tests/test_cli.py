import json
from pathlib import Path

import numpy as np
import pytest

from gwharmonic import rde
from gwharmonic.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def cloud_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("cloudrun")
    code = run(["rde", "solve", "--particles", "100000", "--tol", "3e-3",
                "--seed", "7", "--out", str(out)])
    assert code == 0
    return out / "cloud_M100000_seed7.txt"


def test_solve_writes_cloud_and_trace(cloud_file):
    assert cloud_file.exists()
    cloud = rde.load_cloud(cloud_file)
    assert cloud.size == 100000
    trace = (cloud_file.parent / "rde_solve_trace_seed7.csv").read_text().splitlines()
    assert trace[0] == "iteration,d1"
    assert len(trace) >= 3
    info = json.loads((cloud_file.parent / "rde_solve_seed7.json").read_text())
    assert info["converged"] is True
    assert info["config"]["seed"] == 7


def test_solve_reproducible_byte_for_byte(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["rde", "solve", "--particles", "50000", "--tol", "4e-3",
                    "--seed", "99", "--out", str(out)]) == 0
    fa = (a / "cloud_M50000_seed99.txt").read_bytes()
    fb = (b / "cloud_M50000_seed99.txt").read_bytes()
    assert fa == fb


def test_solve_warns_below_floor(tmp_path, capsys):
    assert run(["rde", "solve", "--particles", "20000", "--tol", "1e-9",
                "--max-iters", "3", "--seed", "1", "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    assert "Monte Carlo floor" in err


def test_validate_passes_on_solved(cloud_file, tmp_path):
    code = run(["rde", "validate", "--cloud", str(cloud_file),
                "--seed", "3", "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "rde_validate_seed3.json").read_text())
    assert all(c["passed"] for c in report["checks"])


def test_validate_negative_control(tmp_path):
    ones = rde.constant_cloud(5000, 1.0)
    path = tmp_path / "ones.txt"
    rde.save_cloud(ones, path)
    # fails normally, passes under --expect-fail
    assert run(["rde", "validate", "--cloud", str(path), "--out", str(tmp_path)]) == 1
    assert run(["rde", "validate", "--cloud", str(path), "--expect-fail",
                "--out", str(tmp_path)]) == 0


def test_validate_corrupt_cloud(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("GAMMA-CLOUD v1 10 0 0\n1.0\n")
    assert run(["rde", "validate", "--cloud", str(bad), "--out", str(tmp_path)]) == 2
    assert "count" in capsys.readouterr().err


def test_missing_cloud_directs_to_solve(tmp_path, capsys):
    code = run(["continuum", "dimension", "--cloud", str(tmp_path / "nope.txt"),
                "--out", str(tmp_path)])
    assert code == 2
    assert "rde solve" in capsys.readouterr().err


def test_beta_report(cloud_file, tmp_path):
    code = run(["beta", "--cloud", str(cloud_file), "--trials", "200000",
                "--seed", "5", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "beta_cross_validate_seed5.json").read_text())
    assert {e["method"] for e in rep["estimates"]} == {"moment", "triple", "shift"}
    assert len(rep["z_matrix"]) == 3
    csv = (tmp_path / "beta_cross_validate_seed5.csv").read_text().splitlines()
    assert csv[0].startswith("method,value")
    assert len(csv) == 4


def test_beta_single_method(cloud_file, tmp_path):
    code = run(["beta", "--cloud", str(cloud_file), "--trials", "100000",
                "--method", "triple", "--seed", "4", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "beta_triple_seed4.json").read_text())
    assert 0.7 < rep["value"] < 0.85


def test_discrete_levelset(tmp_path):
    code = run(["discrete", "levelset", "--offspring", "geometric", "--n", "40",
                "--p", "8,20", "--trials", "1500", "--seed", "11", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "levelset_geometric_11.json").read_text())
    assert len(rep["cells"]) == 2
    assert (tmp_path / "levelset_geometric_11.csv").exists()


def test_discrete_theorem1_smoke_preset(cloud_file, tmp_path):
    code = run(["discrete", "theorem1", "--offspring", "geometric",
                "--preset", "smoke", "--trials", "60", "--cloud", str(cloud_file),
                "--seed", "13", "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "theorem1_geometric_13.json").read_text())
    assert [c["n"] for c in rep["cells"]] == [16, 32, 64]
    assert code in (0, 1)  # trend checks may be noisy at smoke scale


def test_discrete_fixed_size_rejects_big_n(cloud_file, tmp_path, capsys):
    code = run(["discrete", "fixed-size", "--offspring", "geometric",
                "--edges", "400", "--n", "30", "--cloud", str(cloud_file),
                "--out", str(tmp_path)])
    assert code == 2
    assert "sqrt(N)/2" in capsys.readouterr().err


def test_discrete_requires_offspring(cloud_file, tmp_path, capsys):
    code = run(["discrete", "theorem1", "--cloud", str(cloud_file), "--out", str(tmp_path)])
    assert code == 2
    assert "--offspring" in capsys.readouterr().err


def test_continuum_dimension(cloud_file, tmp_path):
    code = run(["continuum", "dimension", "--cloud", str(cloud_file),
                "--eps", "2^-4,2^-6,2^-8", "--trials", "400",
                "--seed", "21", "--out", str(tmp_path)])
    assert code == 0
    csv = (tmp_path / "continuum_dimension_seed21.csv").read_text().splitlines()
    assert csv[0] == "eps,exponent,std_error,trials,extrapolated"
    assert len(csv) == 4
    rep = json.loads((tmp_path / "continuum_dimension_seed21.json").read_text())
    assert 0.4 < rep["extrapolated"] < 1.1


def test_bad_eps_rejected(cloud_file, tmp_path):
    assert run(["continuum", "dimension", "--cloud", str(cloud_file),
                "--eps", "0.7", "--out", str(tmp_path)]) == 2
