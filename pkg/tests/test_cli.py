import subprocess
import sys

import pytest
import yaml

from podrom import cli
from podrom.errors import ConvergenceError
from podrom.io import read_table

SMALL = {
    "problem": {"name": "heat-gv1"},
    "discretization": {"m": 40, "n_t": 40},
    "pod": {"space": "H", "energy_loss": 1e-3},
    "errors": {"ell_max": 8},
}


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_presets_shipped():
    names = cli.preset_names()
    for required in ("run-gv1-desk", "run-gv1", "run-gv2-desk", "run-gv3", "run-gv4-flags", "cubic",
                     "snapopt-transient", "cross-mesh", "robin-desk"):
        assert required in names
    for n in names:
        cli.load_config(preset=n)


def test_all_stage_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["all", "--config", str(write(tmp_path, SMALL)), "--out", str(out)]) == 0
    for name in ("snapshots.csv", "basis.csv", "spectrum.csv", "rom_system.csv", "rom_trajectory.csv",
                 "summary.txt", "timings.json", "report/errors.csv", "report/spectrum.csv"):
        assert (out / name).is_file(), name
    assert not list(tmp_path.glob(".podrom-*"))


@pytest.mark.parametrize("stage,expected", [("simulate", "snapshots.csv"), ("pod", "basis.csv"),
                                            ("rom", "rom_trajectory.csv"), ("errors", "report/errors.csv")])
def test_single_stages(tmp_path, stage, expected):
    out = tmp_path / stage
    assert cli.run_pipeline(cli.parse_config(SMALL), stage, out) == 0
    assert (out / expected).is_file()


@pytest.mark.parametrize("bad", [
    {"pod": {"space": "Q"}},
    {"pod": {"ell": 3, "energy_loss": 0.01}},
    {"problem": {"name": "nope"}},
    {"discretization": {"m": 0}},
    {"unknown": 1},
    {"snapopt": {"k": 2, "tau0": [0.1]}},
])
def test_config_errors_exit_2(tmp_path, bad):
    out = tmp_path / "out"
    data = {**SMALL, **bad}
    assert cli.main(["all", "--config", str(write(tmp_path, data)), "--out", str(out)]) == 2
    assert not out.exists()


def test_unparseable_and_missing(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("pod: [unclosed")
    assert cli.main(["pod", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["pod", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["pod", "--preset", "no-such-preset", "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["pod", "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_rank_deficiency_exit_4(tmp_path):
    data = {**SMALL, "pod": {"ell": 500}}
    out = tmp_path / "out"
    assert cli.main(["pod", "--config", str(write(tmp_path, data)), "--out", str(out)]) == 4
    assert not out.exists()


def test_solver_failure_exit_3(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise ConvergenceError("no convergence", residual=1.0)

    monkeypatch.setattr(cli, "state_solve", boom)
    out = tmp_path / "out"
    assert cli.run_pipeline(cli.parse_config(SMALL), "all", out) == 3
    assert not out.exists()
    assert not list(tmp_path.glob(".podrom-*"))


def test_unexpected_failure_exit_1(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "save_spectrum", boom)
    out = tmp_path / "out"
    assert cli.run_pipeline(cli.parse_config(SMALL), "pod", out) == 1
    assert not out.exists()


def test_flag_comparison_outputs(tmp_path):
    data = {**SMALL, "pod": {"space": "H", "compare_flags": True}}
    out = tmp_path / "out"
    assert cli.run_pipeline(cli.parse_config(data), "errors", out) == 0
    for f in ("svd", "eig_yyt", "eig_yty"):
        assert (out / f"spectrum_{f}.csv").is_file()
    meta, cols, rows = read_table(out / "flag_agreement.csv")
    assert cols[1:4] == ["lambda_svd", "lambda_eig_yyt", "lambda_eig_yty"]
    assert float(rows[0][4]) < 1e-10


def test_snapopt_stage(tmp_path):
    data = {"problem": {"name": "moving-source"}, "discretization": {"m": 15, "n_t": 21},
            "snapopt": {"k": 1, "tau0": [0.5], "budget": 12, "base_n_t": 5, "fine_n_t": 21, "ell": 3}}
    out = tmp_path / "out"
    assert cli.main(["snapopt", "--config", str(write(tmp_path, data)), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "snapopt_trace.csv").is_file() and (out / "snapopt_placement.json").is_file()
    assert cli.run_pipeline(cli.parse_config(SMALL), "snapopt", tmp_path / "o2") == 2


def test_cross_mesh_run(tmp_path):
    data = {"problem": {"name": "heat-gv1"}, "discretization": {"m": 15, "n_t": 8, "perturb": 0.3},
            "pod": {"flag": "eig_yty", "ell": 4}, "errors": {"ell_max": 4}}
    out = tmp_path / "out"
    assert cli.run_pipeline(cli.parse_config(data), "all", out, threads=2) == 0
    assert "difference quotients skipped" in (out / "report" / "summary.txt").read_text()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "podrom.cli", "presets"], capture_output=True, text=True, check=True)
    assert "run-gv1-desk" in r.stdout
