import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from podrom.analytics import rom_error_curve
from podrom.errors import ConvergenceError, IllPosedRomError, InvalidArgumentError
from podrom.mesh import ModelProblem, RobinBoundary, build_grid, cubic_jacobian, cubic_load, weight_matrix
from podrom.pod import compute_pod_basis, project
from podrom.problems import cubic_heat, perturbed_grid
from podrom.rom import (
    assemble_rom,
    build_linearization_data,
    lift,
    rom_step_sequence,
    save_rom_system,
    save_trajectory,
)
from podrom.snapshots import SnapshotSet, TimeGrid, state_solve, state_solve_on_grids

from conftest import gauss_oracle


def h_error(a, b, weights, w):
    d = a - b
    return np.sqrt(np.sum(weights * np.einsum("ij,ij->j", d, w @ d)))


@pytest.fixture(scope="module")
def cubic_small():
    problem = cubic_heat(1.0)
    grid = build_grid(0, 2, 60)
    traj = state_solve(grid, problem, TimeGrid.uniform(problem.horizon, 60))
    return problem, grid, traj


def test_scalar_rom_matches_quadrature():
    grid = build_grid(0, 1, 30)
    init = lambda x: x * (1 - x) * (1 + x)
    p = ModelProblem(initial=init)
    tg = TimeGrid.uniform(1.0, 11)
    y0 = state_solve(grid, p, tg).matrix()[:, :1]
    basis = compute_pod_basis(SnapshotSet.from_matrix(grid, y0, [1.0], [0.0], time_grid=tg))
    psi = grid.nodal_values(basis.modes[:, 0])
    slopes = np.diff(psi) / np.diff(grid.nodes)
    oracle = gauss_oracle(grid.nodes, lambda x: slopes[np.clip(np.searchsorted(grid.nodes, x) - 1, 0, 30)] ** 2)
    system = assemble_rom(basis, state_solve(grid, p, tg), p, tgrid=tg)
    assert system.reduced_stiffness[0, 0] == pytest.approx(oracle, rel=1e-12)
    eta = rom_step_sequence(system).eta[0]
    a = system.reduced_stiffness[0, 0]
    expected = eta[0] * (1.0 + 0.1 * a) ** -np.arange(11.0)
    np.testing.assert_allclose(eta, expected, rtol=1e-12)


def test_reduced_mass_identity_and_initial(gv1_small):
    problem, grid, tgrid, traj = gv1_small
    basis = compute_pod_basis(traj, ell=8)
    system = assemble_rom(basis, traj, problem)
    np.testing.assert_allclose(system.reduced_mass, np.eye(8), atol=1e-8)
    ev = np.linalg.eigvalsh(system.reduced_mass)
    assert ev[0] > 1e-12 * ev[-1]


def test_initial_value_in_span():
    grid = build_grid(0, 1, 20)
    init = lambda x: np.sin(np.pi * x) - 0.3 * np.sin(3 * np.pi * x)
    p = ModelProblem(initial=init)
    tg = TimeGrid.uniform(1.0, 5)
    traj = state_solve(grid, p, tg)
    basis = compute_pod_basis(traj.subset([0]))
    system = assemble_rom(basis, traj, p)
    y0 = traj.matrix()[:, 0]
    _, proj = project(y0, basis)
    np.testing.assert_allclose(basis.modes @ system.reduced_initial, proj, atol=1e-8 * np.abs(y0).max())


def test_in_span_reproduction(gv1_small):
    problem, grid, tgrid, traj = gv1_small
    basis = compute_pod_basis(traj)
    system = assemble_rom(basis, traj, problem, load_mode="endpoint")
    eta = rom_step_sequence(system).eta
    w = weight_matrix(grid, "H")
    err = h_error(traj.matrix(), basis.modes @ eta, traj.weights, w)
    total = np.sqrt(np.sum(traj.weights * np.einsum("ij,ij->j", traj.matrix(), w @ traj.matrix())))
    assert err <= 1e-8 * total


def test_orthogonal_initial_value_stays_zero():
    grid = build_grid(0, 1, 40)
    tg = TimeGrid.uniform(1.0, 11)
    modes_src = ModelProblem(initial=lambda x: np.sin(np.pi * x))
    basis = compute_pod_basis(state_solve(grid, modes_src, tg).subset([0]))
    p = ModelProblem(initial=lambda x: np.sin(2 * np.pi * x))
    eta = rom_step_sequence(assemble_rom(basis, state_solve(grid, p, tg), p)).eta
    assert np.max(np.abs(eta)) < 1e-12


def test_linearization_data_zero_state():
    grid = build_grid(0, 1, 8)
    p = ModelProblem(kind="semilinear_cubic", cubic=1.0)
    s = SnapshotSet.from_matrix(grid, np.zeros((8, 3)), np.ones(3), np.arange(3.0))
    d = build_linearization_data(s, p)
    assert len(d) == 3
    assert not np.any(d[1].vector) and not np.any(d[1].vector_y) and not np.any(d[1].matrix)


def test_linearization_data_constant_state():
    grid = build_grid(0, 2, 9)
    p = ModelProblem(kind="semilinear_cubic", cubic=1.0, domain=(0.0, 2.0), boundary=RobinBoundary(1, 0, 1, 0))
    s = SnapshotSet.from_matrix(grid, np.ones((11, 1)), [1.0], [0.0])
    assert build_linearization_data(s, p)[0].vector[0] == pytest.approx(2.0, rel=1e-14)


def test_linearization_data_empty_for_linear(gv1_small):
    problem, *_, traj = gv1_small
    d = build_linearization_data(traj, problem)
    assert d.empty and len(d) == 0


@given(st.integers(0, 2**31))
def test_linearization_matrix_symmetric(seed):
    rng = np.random.default_rng(seed)
    grid = build_grid(0, 1, 10)
    s = SnapshotSet.from_matrix(grid, rng.standard_normal((10, 4)), rng.uniform(0.1, 1, 4), np.arange(4.0))
    mat = build_linearization_data(s, ModelProblem(kind="semilinear_cubic", cubic=2.0))[2].matrix
    assert np.max(np.abs(mat - mat.T)) <= 1e-12 * np.max(np.abs(mat))


def test_snapshot_space_data_contracts_to_basis_form(cubic_small):
    problem, grid, traj = cubic_small
    basis = compute_pod_basis(traj, ell=5)
    d = build_linearization_data(traj, problem)
    scale = basis.eigvecs_k / np.sqrt(basis.eigenvalues)
    j = 10
    yj = traj.matrix()[:, j]
    psi = basis.modes
    jac = cubic_jacobian(grid, yj, problem.cubic, 4)
    np.testing.assert_allclose(scale.T @ d[j].vector, psi.T @ cubic_load(grid, yj, problem.cubic, 4),
                               rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(scale.T @ d[j].matrix @ scale, psi.T @ jac @ psi, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(scale.T @ d[j].vector_y, psi.T @ (jac @ yj), rtol=1e-9, atol=1e-12)


@given(st.integers(0, 2**31))
def test_frechet_derivative_second_order(seed):
    rng = np.random.default_rng(seed)
    grid = build_grid(0, 1, 15)
    y, v = rng.standard_normal(15), rng.standard_normal(15)
    jac = cubic_jacobian(grid, y, 1.5, 4)
    r = [np.linalg.norm(cubic_load(grid, y + e * v, 1.5, 4) - cubic_load(grid, y, 1.5, 4) - e * (jac @ v))
         for e in (1e-3, 1e-4)]
    assert np.log10(r[0] / r[1]) >= 1.9


def test_cubic_treatments_close(cubic_small):
    problem, grid, traj = cubic_small
    basis = compute_pod_basis(traj, ell=6)
    w = weight_matrix(grid, "H")
    errs = {}
    for t in ("full", "linearized", "projected"):
        eta = rom_step_sequence(assemble_rom(basis, traj, problem, t, load_mode="endpoint")).eta
        errs[t] = h_error(traj.matrix(), basis.modes @ eta, traj.weights, w)
    assert all(np.isfinite(v) for v in errs.values())
    assert errs["linearized"] <= 10 * errs["full"] and errs["projected"] <= 10 * errs["full"]


def test_treatments_agree_for_tiny_cubic():
    problem = cubic_heat(1e-8)
    grid = build_grid(0, 2, 60)
    traj = state_solve(grid, problem, TimeGrid.uniform(problem.horizon, 60))
    basis = compute_pod_basis(traj, ell=6)
    etas = [rom_step_sequence(assemble_rom(basis, traj, problem, t)).eta for t in ("full", "linearized", "projected")]
    for e in etas[1:]:
        assert np.linalg.norm(e - etas[0]) <= 1e-6 * np.linalg.norm(etas[0])


def test_treatment_grid_requirements(cubic_small):
    problem, grid, traj = cubic_small
    basis = compute_pod_basis(traj, ell=3)
    other = TimeGrid.uniform(problem.horizon, 31)
    with pytest.raises(InvalidArgumentError):
        assemble_rom(basis, traj, problem, "linearized", tgrid=other)
    with pytest.raises(InvalidArgumentError):
        assemble_rom(basis, traj, problem, "none")
    full = assemble_rom(basis, traj, problem, "full", tgrid=other)
    assert rom_step_sequence(full).eta.shape == (3, 31)


def test_reduced_newton_failure(cubic_small):
    problem, grid, traj = cubic_small
    basis = compute_pod_basis(traj, ell=3)
    system = assemble_rom(basis, traj, problem, "full", newton_max=0)
    with pytest.raises(ConvergenceError):
        rom_step_sequence(system)


def test_corrupted_basis_is_ill_posed(gv1_small):
    problem, grid, tgrid, traj = gv1_small
    basis = compute_pod_basis(traj, ell=3)
    from dataclasses import replace

    bad = replace(basis, modes=np.column_stack([basis.modes[:, :2], basis.modes[:, 1]]))
    with pytest.raises(IllPosedRomError):
        rom_step_sequence(assemble_rom(bad, traj, problem))


def test_rom_error_decays_monotonically(gv1_desk):
    problem, grid, tgrid, traj, snaps = gv1_desk
    basis = compute_pod_basis(snaps)
    ells = list(range(1, 17))
    err = rom_error_curve(snaps, problem, "H", ells, basis=basis)
    plateau = np.argmax(err < 1e-9) if np.any(err < 1e-9) else len(err)
    for i in range(plateau):
        for j in range(i + 1, plateau):
            assert err[j] <= 1.05 * err[i]


def test_lift_constant_and_roundtrip(gv1_small):
    problem, grid, tgrid, traj = gv1_small
    basis = compute_pod_basis(traj, ell=4)
    from podrom.rom import RomTrajectory

    e1 = RomTrajectory(np.tile(np.eye(4)[:, :1], (1, len(tgrid))), tgrid)
    lifted = lift(e1, basis).matrix()
    np.testing.assert_array_equal(lifted, np.tile(basis.modes[:, :1], (1, len(tgrid))))
    eta = rom_step_sequence(assemble_rom(basis, traj, problem)).eta
    back, _ = project(lift(RomTrajectory(eta, tgrid), basis), basis)
    np.testing.assert_allclose(back, eta, atol=1e-10 * np.abs(eta).max())


def test_lift_cross_mesh_matches_direct_evaluation():
    rng = np.random.default_rng(5)
    grids = [perturbed_grid(0, 1, 10, 0.4, rng) for _ in range(5)]
    p = ModelProblem(forcing=lambda t, x: np.cos(2 * x) * (1 + t), initial=lambda x: x * (1 - x))
    tg = TimeGrid.uniform(1.0, 5)
    s = state_solve_on_grids(grids, p, tg)
    basis = compute_pod_basis(s, ell=3, flag="eig_yty")
    from podrom.rom import RomTrajectory

    eta = rng.standard_normal((3, 5))
    lifted = lift(RomTrajectory(eta, tg), basis).matrix()
    nodes = basis.grid.nodes
    direct = np.zeros((nodes.size, 3))
    for j, (g, c) in enumerate(zip(s.grids, s.coefficients)):
        vals = g.evaluate(c, nodes)
        direct += np.sqrt(s.weights[j]) * np.outer(vals, basis.eigvecs_k[j] / np.sqrt(basis.eigenvalues))
    np.testing.assert_allclose(lifted, direct[1:-1] @ eta, atol=1e-10 * np.abs(lifted).max())
    with pytest.raises(InvalidArgumentError):
        lift(RomTrajectory(eta, tg), basis, target=build_grid(0, 2, 5))


def test_serialization(tmp_path, cubic_small):
    problem, grid, traj = cubic_small
    basis = compute_pod_basis(traj, ell=3)
    system = assemble_rom(basis, traj, problem, "projected")
    save_rom_system(system, tmp_path / "sys.csv")
    save_trajectory(rom_step_sequence(system), tmp_path / "traj.csv")
    assert "treatment,projected" in (tmp_path / "sys.csv").read_text()
    assert "treatment,projected" in (tmp_path / "traj.csv").read_text()
