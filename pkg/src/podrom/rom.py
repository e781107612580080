"""Reduced Galerkin models: assembly, implicit Euler stepping and lifting.

The reduced unknowns are the coordinates ``eta`` of ``y = sum_i eta_i psi_i``.
Because ``psi_i = Y D^(1/2) phi_i / sqrt(lambda_i)``, reduced matrices written
with the modes coincide with the ``Lambda Phi^T ... Phi Lambda`` forms built
from snapshot correlations; the modes route is used for stepping since it
avoids n-by-n intermediates.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import io as tio
from .errors import ConvergenceError, IllPosedRomError, InvalidArgumentError
from .mesh import (
    Grid1D,
    assemble,
    cubic_jacobian,
    cubic_load,
    gauss_rule,
    initial_moments,
    interpolation_matrix,
    load_vector,
)
from .snapshots import SnapshotSet, TimeGrid, trapezoidal_weights

__all__ = [
    "TREATMENTS",
    "RomSystem",
    "RomTrajectory",
    "NonlinearityData",
    "LinearizationData",
    "assemble_rom",
    "rom_step_sequence",
    "lift",
    "build_linearization_data",
    "full_load_matrix",
    "save_trajectory",
    "save_rom_system",
]

TREATMENTS = ("full", "linearized", "projected", "none")
LOAD_MODES = ("average", "endpoint")


@dataclass(frozen=True, eq=False)
class NonlinearityData:
    """Snapshot-space data of the cubic term linearized at the state ``y_j``.

    ``vector[k] = <N(y_j), yt_k>``, ``vector_y[k] = <N'(y_j) y_j, yt_k>`` and
    ``matrix[k, l] = <N'(y_j) yt_l, yt_k>`` with ``yt_k = sqrt(alpha_k) y_k``.
    """

    vector: np.ndarray
    vector_y: np.ndarray
    matrix: np.ndarray


class LinearizationData(Sequence):
    """Lazy sequence of :class:`NonlinearityData`, one per trajectory snapshot.

    Entries are computed on access: each costs O(n^2 m), so a full sweep over
    a long trajectory should contract with the modes instead (see
    :func:`rom_step_sequence`).
    """

    def __init__(self, snapshots, problem, npts=4):
        self.problem = problem
        self.npts = npts
        self.c3 = problem.cubic
        if not snapshots.homogeneous:
            grid = Grid1D(np.unique(np.concatenate([g.nodes for g in snapshots.grids])))
            vals = snapshots.values_on(grid.nodes)
            y = vals[1:-1] if snapshots.dirichlet else vals
        else:
            grid, y = snapshots.grid, snapshots.matrix()
        self.grid = grid
        self.tilde = y * np.sqrt(snapshots.weights)
        self.states = y[:, snapshots.trajectory_indices()]

    @property
    def empty(self):
        return self.c3 == 0.0

    def __len__(self):
        return 0 if self.empty else self.states.shape[1]

    def __getitem__(self, j):
        if self.empty:
            raise IndexError("no nonlinearity data for a linear problem")
        yj = self.states[:, j]
        jac = cubic_jacobian(self.grid, yj, self.c3, self.npts)
        ny = cubic_load(self.grid, yj, self.c3, self.npts)
        return NonlinearityData(
            vector=self.tilde.T @ ny,
            vector_y=self.tilde.T @ (jac @ yj),
            matrix=self.tilde.T @ (jac @ self.tilde),
        )


def build_linearization_data(snapshots, problem, npts=4):
    """Linearization of ``c3 y^3`` around every trajectory snapshot (empty if ``c3 = 0``)."""
    return LinearizationData(snapshots, problem, npts)


@dataclass(eq=False)
class RomSystem:
    """Reduced matrices and data for one basis, problem and time grid.

    ``reduced_load[j]`` is the load used in the step ending at ``t_j``
    (row 0 is unused and kept for index alignment).
    """

    basis: object
    problem: object
    treatment: str
    time_grid: TimeGrid
    reduced_mass: np.ndarray
    reduced_stiffness: np.ndarray
    reduced_load: np.ndarray
    reduced_initial: np.ndarray
    initial_moments: np.ndarray
    lambda_scale: np.ndarray
    load_mode: str = "average"
    newton_tol: float = 1e-10
    newton_max: int = 30
    snapshot_states: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def ell(self):
        return self.reduced_mass.shape[0]

    def stiffness_at(self, t):
        if not self.problem.time_dependent:
            return self.reduced_stiffness
        fe = assemble(self.basis.grid, self.problem, t)
        psi = self.basis.modes
        return psi.T @ (fe.operator @ psi)


@dataclass(eq=False)
class RomTrajectory:
    """Reduced coordinates, one column per time instant."""

    eta: np.ndarray
    time_grid: TimeGrid
    treatment: str = "none"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if self.eta.shape[1] != len(self.time_grid):
            raise InvalidArgumentError("column count must equal the number of time instants")


def full_load_matrix(grid, problem, tgrid, mode="average"):
    """FE loads per step as columns; column 0 is zero.

    ``average`` is the mean over ``(t_{j-1}, t_j]`` by 3-point Gauss in time,
    ``endpoint`` the value at ``t_j``. Independent of the basis, so it can be
    shared between reduced systems of different size.
    """
    if mode not in LOAD_MODES:
        raise InvalidArgumentError(f"unknown load mode {mode!r}")
    t = tgrid.instants
    out = np.zeros((grid.n_dofs(problem.dirichlet), t.size))
    if mode == "endpoint":
        for j in range(1, t.size):
            out[:, j] = load_vector(grid, problem, t[j])
        return out
    xi, w = gauss_rule(3)
    for j in range(1, t.size):
        t0, t1 = t[j - 1], t[j]
        out[:, j] = sum(wq * load_vector(grid, problem, t0 + (t1 - t0) * s) for s, wq in zip(xi, w))
    return out


def assemble_rom(
    basis,
    snapshots,
    problem,
    treatment="none",
    tgrid=None,
    load_mode="average",
    newton_tol=1e-10,
    newton_max=30,
    full_loads=None,
):
    """Reduced system for ``problem`` in the span of ``basis``.

    Parameters
    ----------
    basis : PodBasis
    snapshots : SnapshotSet
        Data the basis was built from; its trajectory supplies the
        linearization states for the ``linearized`` and ``projected``
        treatments.
    treatment : {"full", "linearized", "projected", "none"}
    tgrid : TimeGrid, optional
        Defaults to the snapshot time grid.
    load_mode : {"average", "endpoint"}
        Mean of the load over each step (3-point Gauss in time) or its value
        at the step end point as in the full-order scheme.
    full_loads : ndarray, optional
        Output of :func:`full_load_matrix` for the basis grid, reused across
        several bases.
    """
    if treatment not in TREATMENTS:
        raise InvalidArgumentError(f"unknown treatment {treatment!r}, expected one of {TREATMENTS}")
    if load_mode not in LOAD_MODES:
        raise InvalidArgumentError(f"unknown load mode {load_mode!r}")
    if treatment == "none" and problem.cubic != 0.0:
        raise InvalidArgumentError("treatment 'none' requires a linear problem")
    tgrid = snapshots.time_grid if tgrid is None else tgrid
    if tgrid is None:
        raise InvalidArgumentError("no time grid given and the snapshot set has none")
    grid = basis.grid
    if basis.dirichlet != problem.dirichlet:
        raise InvalidArgumentError("basis boundary layout does not match the problem")
    fe = assemble(grid, problem, 0.0)
    psi = basis.modes
    m_r = psi.T @ (fe.mass @ psi)
    a_r = psi.T @ (fe.operator @ psi)
    b0 = initial_moments(grid, problem)
    rhs0 = psi.T @ b0
    try:
        eta0 = sla.solve(m_r, rhs0, assume_a="pos")
    except (sla.LinAlgError, ValueError) as exc:
        raise IllPosedRomError(f"reduced mass matrix is singular: {exc}") from exc
    if full_loads is None:
        full_loads = full_load_matrix(grid, problem, tgrid, load_mode)
    elif full_loads.shape != (psi.shape[0], len(tgrid)):
        raise InvalidArgumentError("precomputed loads do not match the basis grid and time grid")
    states = None
    if treatment in ("linearized", "projected") and problem.cubic != 0.0:
        if snapshots.time_grid is None or not snapshots.time_grid.same_as(tgrid):
            raise InvalidArgumentError(
                f"treatment {treatment!r} needs the ROM time grid to equal the snapshot time grid"
            )
        idx = snapshots.trajectory_indices()
        if snapshots.homogeneous and snapshots.grid.same_as(grid):
            states = snapshots.matrix()[:, idx]
        else:
            vals = snapshots.subset(idx).values_on(grid.nodes)
            states = vals[1:-1] if basis.dirichlet else vals
    return RomSystem(
        basis=basis,
        problem=problem,
        treatment=treatment if problem.cubic != 0.0 else "none",
        time_grid=tgrid,
        reduced_mass=0.5 * (m_r + m_r.T),
        reduced_stiffness=a_r,
        reduced_load=(psi.T @ full_loads).T,
        reduced_initial=eta0,
        initial_moments=rhs0,
        lambda_scale=1.0 / np.sqrt(basis.eigenvalues),
        load_mode=load_mode,
        newton_tol=newton_tol,
        newton_max=newton_max,
        snapshot_states=states,
    )


def _factor(mat, step):
    if not np.all(np.isfinite(mat)):
        raise IllPosedRomError(f"reduced system has nonfinite entries at step {step}")
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond * np.finfo(float).eps >= 1.0:
        raise IllPosedRomError(f"reduced system is numerically singular at step {step} (cond {cond:.2e})")
    return sla.lu_factor(mat)


def rom_step_sequence(system, tgrid=None):
    """Implicit Euler trajectory of the reduced system.

    Each step solves
    ``(M_r + dt A_r) eta_j + dt N_r(eta_j) = M_r eta_{j-1} + dt F_j``
    where ``N_r`` depends on the treatment: exact cubic term via lifting
    (``full``), its linearization at the snapshot ``y_j`` (``linearized``),
    the frozen value at ``y_j`` (``projected``) or nothing (``none``).
    """
    tgrid = system.time_grid if tgrid is None else tgrid
    if not tgrid.same_as(system.time_grid):
        raise InvalidArgumentError("system was assembled for a different time grid")
    basis, problem = system.basis, system.problem
    grid, psi, c3 = basis.grid, basis.modes, problem.cubic
    m_r = system.reduced_mass
    t = tgrid.instants
    dts = tgrid.steps
    etas = [system.reduced_initial.copy()]
    lu_cache = {}
    iters = []
    for j in range(1, t.size):
        dt = dts[j - 1]
        a_r = system.stiffness_at(t[j])
        base = m_r + dt * a_r
        rhs = m_r @ etas[-1] + dt * system.reduced_load[j]
        treatment = system.treatment
        if treatment in ("none", "projected"):
            if treatment == "projected":
                rhs = rhs - dt * (psi.T @ cubic_load(grid, system.snapshot_states[:, j], c3, 4))
            if problem.time_dependent:
                lu = _factor(base, j)
            else:
                key = float(f"{dt:.12e}")
                if key not in lu_cache:
                    lu_cache[key] = _factor(base, j)
                lu = lu_cache[key]
            eta = sla.lu_solve(lu, rhs)
        elif treatment == "linearized":
            yj = system.snapshot_states[:, j]
            jac = cubic_jacobian(grid, yj, c3, 4)
            pj = jac @ psi
            g = psi.T @ cubic_load(grid, yj, c3, 4)
            h = pj.T @ yj
            mat = base + dt * (psi.T @ pj)
            eta = sla.lu_solve(_factor(mat, j), rhs - dt * (g - h))
        else:
            eta, its = _rom_newton(grid, psi, base, dt, c3, rhs, etas[-1], system, j)
            iters.append(its)
        if not np.all(np.isfinite(eta)):
            raise IllPosedRomError(f"reduced solution became nonfinite at step {j}")
        etas.append(eta)
    info = {"newton_iterations": iters} if iters else {}
    return RomTrajectory(np.column_stack(etas), tgrid, system.treatment, info)


def _rom_newton(grid, psi, base, dt, c3, rhs, eta0, system, step):
    eta = eta0.copy()
    rhs_norm = np.linalg.norm(rhs)
    rnorm = np.inf
    for it in range(system.newton_max + 1):
        y = psi @ eta
        res = base @ eta + dt * (psi.T @ cubic_load(grid, y, c3)) - rhs
        rnorm = np.linalg.norm(res)
        if rnorm <= system.newton_tol * (1.0 + rhs_norm):
            return eta, it
        if it == system.newton_max:
            break
        jac = base + dt * (psi.T @ (cubic_jacobian(grid, y, c3) @ psi))
        eta = eta - sla.lu_solve(_factor(jac, step), res)
        if not np.all(np.isfinite(eta)):
            break
    raise ConvergenceError(
        f"reduced Newton did not converge at step {step} (residual {rnorm:.3e})",
        residual=float(rnorm),
        iterations=system.newton_max,
        step=step,
    )


def lift(traj, basis, target=None, inner_product=None):
    """Full-grid trajectory ``sum_i eta_i(t_j) psi_i`` on ``target`` (default: basis grid)."""
    target = basis.grid if target is None else target
    a, b = basis.grid.interval
    ta, tb = target.interval
    if not (np.isclose(a, ta) and np.isclose(b, tb)):
        raise InvalidArgumentError("target grid covers a different interval")
    if target is basis.grid or target.same_as(basis.grid):
        values = basis.modes @ traj.eta
    else:
        nodal = basis.grid.nodal_values(basis.modes)
        full = interpolation_matrix(basis.grid.nodes, target.nodes) @ nodal @ traj.eta
        values = full[1:-1] if basis.dirichlet else full
    tg = traj.time_grid
    return SnapshotSet.from_matrix(
        target,
        values,
        trapezoidal_weights(tg),
        tg.instants,
        inner_product=inner_product or basis.space.selector,
        time_grid=tg,
    )


def save_trajectory(traj, path):
    meta = [("format", "podrom-rom-trajectory-v1"), ("treatment", traj.treatment)]
    cols = ["t"] + [f"eta_{i + 1}" for i in range(traj.eta.shape[0])]
    rows = ([t] + list(col) for t, col in zip(traj.time_grid.instants, traj.eta.T))
    return tio.write_table(path, meta, cols, rows)


def save_rom_system(system, path):
    """Reduced matrices and initial value; loads are reproducible from the problem."""
    ell = system.ell
    meta = [
        ("format", "podrom-rom-system-v1"),
        ("treatment", system.treatment),
        ("load_mode", system.load_mode),
        ("lambda_scale", list(system.lambda_scale)),
        ("initial", list(system.reduced_initial)),
    ]
    cols = ["block", "row"] + [f"c{k + 1}" for k in range(ell)]
    rows = [["mass", i] + list(r) for i, r in enumerate(system.reduced_mass)]
    rows += [["stiffness", i] + list(r) for i, r in enumerate(system.reduced_stiffness)]
    return tio.write_table(path, meta, cols, rows)
