from __future__ import annotations

import csv
import json
import math
import shutil
import subprocess
import sys

import pytest

from insulopt import __version__, oracles
from insulopt.cli import main
from insulopt.mesh import disk, load_mesh

M0 = oracles.threshold_m0(1.0)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


# ----------------------------------------------------------------------
# analytic


def test_analytic_ball_energy(capsys):
    doc = run_json(capsys, "analytic", "ball-energy", "--d", 2, "--radius", 1, "--m", 1, "--no-timestamp")
    c, e = oracles.ball_energy(oracles.BallSpec(2, 1.0), 1.0)
    assert doc["energy"] == pytest.approx(e, rel=1e-11)
    assert doc["c_opt"] == pytest.approx(c, rel=1e-11)
    assert doc["version"] == __version__
    assert "timestamp" not in doc
    assert doc["config"]["query"] == "ball-energy"


def test_analytic_timestamp_present_by_default(capsys):
    doc = run_json(capsys, "analytic", "threshold")
    assert "timestamp" in doc
    assert doc["m0"] == pytest.approx(M0, rel=1e-11)
    assert doc["agreement"] < 1e-9


def test_analytic_bound_sequence(capsys):
    doc = run_json(capsys, "analytic", "bound", "--d", 3, "--m", 1, "--n", 5, "--sequence", "--no-timestamp")
    assert doc["n"] == [1, 2, 3, 4, 5]
    assert doc["bound"] == pytest.approx([12 * math.pi / n for n in range(1, 6)], rel=1e-11)


@pytest.mark.parametrize(
    "argv,key,value",
    [
        (["interval-lambda", "--m", "2"], "lambda", 0.7401738843944277),
        (["disk-lambda", "--m", "2m0"], "lambda", oracles.disk_radial_lambda(1.0, 2 * M0)),
        (["bessel-root", "--kind", "neumann_j1prime"], "root", 1.8411837813405327),
        (["bessel", "--order", "0", "--x", "2.404825557695858"], "value", 0.0),
    ],
)
def test_analytic_queries(capsys, argv, key, value):
    doc = run_json(capsys, "analytic", *argv, "--no-timestamp")
    assert doc[key] == pytest.approx(value, rel=1e-11, abs=1e-12)


def test_analytic_two_balls(capsys):
    doc = run_json(capsys, "analytic", "two-balls", "--r1", 0.5, "--r2", 1, "--no-timestamp")
    assert doc["unique"] is True
    assert doc["c1"] == pytest.approx(0.0, abs=1e-12)
    assert doc["c2"] > 0


def test_json_is_deterministic_and_rounded(capsys):
    argv = ["analytic", "disk-lambda", "--m", "0.5m0", "--no-timestamp"]
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv)[1]
    assert a == b
    doc = json.loads(a)
    assert len(repr(doc["lambda"]).replace(".", "").lstrip("0")) <= 12
    assert list(doc) == sorted(doc)


# ----------------------------------------------------------------------
# mesh


def test_mesh_round_trip(capsys, tmp_path):
    path = tmp_path / "d.msh"
    doc = run_json(capsys, "mesh", "disk", "--radius", 1, "--refinement", 2, "-o", path, "--no-timestamp")
    assert load_mesh(path) == disk(1.0, 2)
    assert doc["summary"]["boundary_nodes"] == 32
    assert doc["summary"]["components"] == 1
    energy = run_json(capsys, "energy", "--mesh", path, "--m", 1, "--no-timestamp")
    direct = run_json(capsys, "energy", "--mesh", "disk:1,2", "--m", 1, "--no-timestamp")
    assert energy["energy"] == direct["energy"]


def test_mesh_summary_file(capsys, tmp_path):
    code, out, _ = run(
        capsys, "mesh", "two_disks", "--refinement", 2, "-o", tmp_path / "t.msh", "--summary", tmp_path / "s.json"
    )
    assert code == 0 and out == ""
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["summary"]["components"] == 2


def test_mesh_bad_arguments(capsys, tmp_path):
    code, _, err = run(capsys, "mesh", "disk", "--refinement", -1, "-o", tmp_path / "x.msh")
    assert code == 2
    assert "disk" in err
    code, _, _ = run(capsys, "mesh", "disk", "--radius", -1, "-o", tmp_path / "x.msh")
    assert code == 2


# ----------------------------------------------------------------------
# energy


def test_energy_disk(capsys, tmp_path):
    doc = run_json(capsys, "energy", "--mesh", "disk:1,4", "--m", 1, "--csv", tmp_path / "h.csv", "--no-timestamp")
    exact = oracles.ball_energy(oracles.BallSpec(2, 1.0), 1.0)[1]
    assert doc["energy"] == pytest.approx(exact, rel=5e-3)
    assert doc["symmetry"]["classification"] == "radial"
    assert doc["method"] == "surrogate"
    assert doc["config"]["m"] == "1"
    rows = list(csv.reader((tmp_path / "h.csv").open()))
    assert rows[0] == ["s", "h_opt"]
    assert len(rows) == 1 + 128
    assert float(rows[1][1]) == pytest.approx(1 / (2 * math.pi), rel=1e-2)


def test_energy_with_u_and_radial_source(capsys, tmp_path):
    out = tmp_path / "e.json"
    code, stdout, _ = run(capsys, "energy", "--mesh", "disk:1,3", "--m", 1, "--f", "radial:bump", "--with-u", "--out", out)
    assert code == 0 and stdout == ""
    doc = json.loads(out.read_text())
    assert len(doc["u"]) == doc["mesh"]["nodes"]
    assert doc["energy"] < 0


def test_energy_two_disks_uses_alternating(capsys):
    doc = run_json(capsys, "energy", "--mesh", "two_disks:0.5,1,3,2", "--m", 1, "--no-timestamp")
    assert doc["method"] == "alternating"


def test_energy_surrogate_on_disconnected_mesh_fails(capsys):
    code, _, err = run(capsys, "energy", "--mesh", "two_disks:0.5,1,3,2", "--m", 1, "--method", "surrogate")
    assert code == 1
    assert "solver error" in err


def test_energy_iteration_cap_fails(capsys):
    code, _, _ = run(capsys, "energy", "--mesh", "two_disks:0.5,1,3,2", "--m", 1, "--max-iter", 2)
    assert code == 1


def test_energy_zero_source_csv_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "energy", "--mesh", "disk:1,2", "--m", 1, "--f", "const:0", "--csv", tmp_path / "x.csv")
    assert code == 2
    assert "--csv" in err


@pytest.mark.parametrize(
    "argv,flag",
    [
        (["energy", "--mesh", "nosuchfile.msh", "--m", "1"], "--mesh"),
        (["energy", "--mesh", "disk:1,2", "--m", "-1"], "--m"),
        (["energy", "--mesh", "disk:1,2", "--m", "abc"], "--m"),
        (["energy", "--mesh", "disk:1,2", "--m", "1", "--f", "radial:nope"], "--f"),
        (["energy", "--mesh", "disk:1,2", "--m", "1", "--f", "const:-2"], "--f"),
        (["energy", "--mesh", "rectangle:1,1,3,3", "--m", "2m0"], "--m"),
        (["eigen", "--mesh", "disk:1,2", "--m", "1", "--starts", "bogus"], "--starts"),
        (["eigen", "--mesh", "disk:1,2", "--m", "1", "--starts", "cap:0:2"], "--starts"),
        (["eigen", "--mesh", "disk:1,2", "--m", "1", "--starts", "random:x"], "--starts"),
        (["threshold", "--refinement", "2", "--bracket", "3,1"], "--bracket"),
        (["threshold", "--mesh", "rectangle:1,1,3,3"], "--mesh"),
        (["converge", "--study", "interval-lambda", "--levels", "1,2"], "--levels"),
    ],
)
def test_usage_errors_name_the_flag(capsys, argv, flag):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert flag in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["nosuchcommand"],
        ["energy", "--m", "1"],
        ["eigen", "--mesh", "disk:1,2", "--m", "1", "--tol", "-1"],
        ["eigen", "--mesh", "disk:1,2", "--m", "1", "--max-iter", "0"],
        ["analytic", "bound", "--n", "0"],
    ],
)
def test_argparse_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_unwritable_output_is_usage_error(capsys, tmp_path):
    target = tmp_path / "missing-dir" / "out.json"
    code, _, _ = run(capsys, "analytic", "threshold", "--out", target)
    assert code == 2


def test_bad_mesh_file(capsys, tmp_path):
    bad = tmp_path / "bad.msh"
    bad.write_text("not a mesh\n")
    code, _, err = run(capsys, "energy", "--mesh", bad, "--m", 1)
    assert code == 2
    assert "line" in err


# ----------------------------------------------------------------------
# eigen, shape, threshold, converge


def test_eigen_radial(capsys, tmp_path):
    doc = run_json(capsys, "eigen", "--mesh", "disk:1,3", "--m", "2m0", "--csv", tmp_path / "h.csv", "--no-timestamp")
    assert doc["classification"] == "radial"
    assert doc["lambda"] == pytest.approx(doc["lambda_radial_oracle"], rel=5e-3)
    assert doc["m0_oracle"] == pytest.approx(M0, rel=1e-11)
    assert len(doc["per_start"]) == 4
    rows = list(csv.reader((tmp_path / "h.csv").open()))
    assert rows[0] == ["start", "angle", "h_opt"]
    assert len(rows) == 1 + 4 * 64


def test_eigen_broken_with_custom_starts(capsys):
    doc = run_json(capsys, "eigen", "--mesh", "disk:1,3", "--m", "0.5m0", "--starts", "uniform,cap:1.0:0.4,random:5",
                   "--no-timestamp")
    assert doc["classification"] == "nonradial"
    assert [s["name"] for s in doc["per_start"]] == ["uniform", "cap(1,0.4)", "random(5)"]
    assert doc["zero_set_fraction"] > 0


def test_eigen_interval_has_no_symmetry_block(capsys):
    doc = run_json(capsys, "eigen", "--mesh", "interval:-1,1,100", "--m", 2, "--starts", "uniform", "--no-timestamp")
    assert "classification" not in doc
    assert doc["lambda"] == pytest.approx(oracles.interval_lambda(2.0), rel=1e-3)


def test_eigen_is_deterministic(capsys):
    argv = ["eigen", "--mesh", "disk:1,2", "--m", "0.5m0", "--seed", 3, "--no-timestamp"]
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv)[1]
    assert a.encode() == b.encode()
    assert json.loads(a)["config"]["seed"] == 3


def test_shape_energy(capsys, tmp_path):
    doc = run_json(capsys, "shape", "--problem", "energy", "--mesh", "disk:1,4", "--m", 1, "--csv", tmp_path / "j.csv",
                   "--no-timestamp")
    assert doc["is_stationary"] is True
    assert doc["mean_j"] == pytest.approx(-0.25, rel=2e-2)
    header = next(csv.reader((tmp_path / "j.csv").open()))
    assert header == ["angle", "u", "du_dnu", "du_dtau", "j"]


def test_shape_eigen_broken(capsys):
    doc = run_json(capsys, "shape", "--problem", "eigen", "--mesh", "disk:1,3", "--m", "0.5m0", "--no-timestamp")
    assert doc["is_stationary"] is False
    assert set(doc["first_variation"]) == {"1", "2", "3"}


def test_shape_energy_zero_source_fails(capsys):
    code, _, _ = run(capsys, "shape", "--problem", "energy", "--mesh", "disk:1,2", "--m", 1, "--f", "const:0")
    assert code == 1


def test_threshold_bracket_error(capsys):
    code, _, err = run(capsys, "threshold", "--refinement", 2, "--bracket", "2,3")
    assert code == 1
    assert "straddle" in err


def test_threshold_small_mesh(capsys, tmp_path):
    doc = run_json(capsys, "threshold", "--refinement", 2, "--width-tol", 0.2, "--csv", tmp_path / "p.csv", "--no-timestamp")
    lo, hi = doc["bracket"]
    assert lo < doc["m0_fem"] < hi
    assert hi - lo < 0.2 * M0
    assert doc["relative_error"] == pytest.approx(abs(doc["m0_fem"] - M0) / M0, rel=1e-9)
    rows = list(csv.reader((tmp_path / "p.csv").open()))
    ms = [float(r[0]) for r in rows[1:]]
    assert ms == sorted(ms)


def test_converge_interval(capsys, tmp_path):
    doc = run_json(capsys, "converge", "--study", "interval-lambda", "--levels", "1,2,3", "--csv", tmp_path / "c.csv",
                   "--no-timestamp")
    rates = [r["rate"] for r in doc["rows"]]
    assert rates[0] == "nan"
    assert all(r > 1.8 for r in rates[1:])
    assert len(list(csv.reader((tmp_path / "c.csv").open()))) == 4


def test_version_flag(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0
    assert __version__ in out


def test_console_script():
    exe = shutil.which("insulopt")
    cmd = [exe] if exe else [sys.executable, "-m", "insulopt.cli"]
    res = subprocess.run(cmd + ["analytic", "threshold", "--no-timestamp"], capture_output=True, text=True, check=False)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["m0"] == pytest.approx(M0, rel=1e-11)
