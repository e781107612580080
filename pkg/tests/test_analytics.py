import json

import numpy as np
import pytest

from podrom.analytics import (
    ErrorReport,
    Stopwatch,
    build_report,
    emit_report,
    proj_error_curve,
    reference_error_curve,
    rom_error_curve,
)
from podrom.errors import RomFailure
from podrom.io import read_table
from podrom.mesh import build_grid
from podrom.pod import compute_pod_basis
from podrom.problems import cubic_heat, heat_gv1
from podrom.snapshots import TimeGrid, append_difference_quotients, state_solve


@pytest.fixture(scope="module")
def desk_basis(gv1_desk):
    problem, grid, tgrid, traj, snaps = gv1_desk
    return problem, snaps, compute_pod_basis(snaps)


def test_proj_curve_matches_tail(desk_basis):
    _, snaps, basis = desk_basis
    curve = proj_error_curve(snaps, basis)
    lam = basis.spectrum[: basis.rank]
    tails = np.array([lam[ell:].sum() for ell in range(basis.rank + 1)])
    assert curve[0] == pytest.approx(np.sqrt(basis.snapshot_energy), rel=1e-12)
    assert np.all(np.abs(curve**2 - tails) <= 1e-8 * basis.total_energy)
    assert curve[-1] <= 1e-9 * np.sqrt(lam[0]) * 10
    assert np.all(np.diff(curve) <= 1e-12 * curve[0])


def test_rom_not_better_than_projection(desk_basis):
    problem, snaps, basis = desk_basis
    ells = list(range(0, 21))
    rom = rom_error_curve(snaps, problem, "H", ells, basis=basis)
    proj_t = proj_error_curve(snaps, basis, 20, trajectory_only=True)
    assert np.all(rom >= proj_t - 1e-10)
    traj = snaps.subset(snaps.trajectory_indices())
    w = basis.weight_matrix()
    y = traj.matrix()
    assert rom[0] == pytest.approx(np.sqrt(np.sum(traj.weights * np.einsum("ij,ij->j", y, w @ y))), rel=1e-12)


def test_rom_error_in_span_small(desk_basis):
    problem, snaps, basis = desk_basis
    err = rom_error_curve(snaps, problem, "H", [basis.rank], basis=basis)
    assert err[0] <= 1e-8 * proj_error_curve(snaps, basis, 0)[0]


def test_rom_failure_raise_and_record():
    problem = cubic_heat(1.0)
    snaps = state_solve(build_grid(0, 2, 30), problem, TimeGrid.uniform(3.0, 20))
    with pytest.raises(RomFailure) as info:
        rom_error_curve(snaps, problem, "H", [2, 3], treatment="full", newton_tol=1e-300)
    assert info.value.ell == 2
    err, failures = rom_error_curve(snaps, problem, "H", [2, 3], treatment="full", newton_tol=1e-300,
                                    on_failure="record", return_failures=True)
    assert np.all(np.isnan(err)) and [f[0] for f in failures] == [2, 3]


def test_reference_equal_to_snapshots_reduces(desk_basis):
    problem, snaps, basis = desk_basis
    traj = snaps.subset(snaps.trajectory_indices())
    ells = [1, 3, 6]
    a = reference_error_curve(snaps, traj, basis, ells, problem)
    b = rom_error_curve(snaps, problem, "H", ells, basis=basis)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_reference_plateau_quarters_with_step():
    problem = heat_gv1()
    grid = build_grid(0, 2, 99)
    fine = state_solve(grid, problem, TimeGrid.uniform(3.0, 3201))
    plateaus = []
    for n_t in (51, 201):
        snaps = append_difference_quotients(state_solve(grid, problem, TimeGrid.uniform(3.0, n_t)))
        basis = compute_pod_basis(snaps)
        plateaus.append(reference_error_curve(snaps, fine, basis, [basis.rank], problem)[0])
    assert 3.0 <= plateaus[0] / plateaus[1] <= 5.0


def test_emit_report_files(tmp_path, desk_basis):
    problem, snaps, basis = desk_basis
    report = build_report(snaps, basis, problem, [0, 1, 2, 5], timings={"fe_solve": 0.5})
    paths = emit_report(report, tmp_path / "r")
    names = sorted(p.name for p in paths)
    assert names == ["errors.csv", "spectrum.csv", "summary.txt", "timings.json"]
    meta, cols, rows = read_table(tmp_path / "r" / "errors.csv")
    assert cols[:4] == ["ell", "proj_error", "proj_error_trajectory", "rom_error"]
    assert [r[0] for r in rows] == ["0", "1", "2", "5"]
    t = json.loads((tmp_path / "r" / "timings.json").read_text())
    assert t["fe_solve"] > 0 and t["rom_solve"] > 0 and t["speedup"] > 0
    first = {p.name: p.read_bytes() for p in paths if p.suffix != ".json"}
    paths2 = emit_report(build_report(snaps, basis, problem, [0, 1, 2, 5]), tmp_path / "r2")
    assert first == {p.name: p.read_bytes() for p in paths2 if p.suffix != ".json"}


def test_emit_report_empty(tmp_path):
    report = ErrorReport(ells=np.array([], dtype=int), proj_error=np.array([]), proj_error_trajectory=np.array([]),
                         rom_error=np.array([]), spectrum=np.array([]), energy=np.array([]))
    emit_report(report, tmp_path)
    _, cols, rows = read_table(tmp_path / "errors.csv")
    assert rows == [] and cols[0] == "ell"


def test_emit_report_path_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    report = ErrorReport(ells=np.array([], dtype=int), proj_error=np.array([]), proj_error_trajectory=np.array([]),
                         rom_error=np.array([]), spectrum=np.array([]), energy=np.array([]))
    with pytest.raises(OSError, match="file"):
        emit_report(report, blocker / "sub")


def test_stopwatch_accumulates():
    w = Stopwatch()
    with w("a"):
        sum(range(1000))
    with w("a"):
        pass
    assert w.records["a"] > 0
