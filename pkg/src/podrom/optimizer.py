"""Placement of additional snapshot instants that minimize the ROM error.

For extra instants ``tau`` in ``[0, T]^k`` the snapshot set is the base
trajectory states plus the states at ``tau``, weighted by the trapezoid rule
on the sorted union of all instants. The objective is the discrete
``L2(0, T; X)`` distance between a fixed fine-grid reference trajectory and
the ROM built from that set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt
import scipy.sparse.linalg as spla

from . import io as tio
from .errors import InvalidArgumentError
from .mesh import assemble, cubic_jacobian, cubic_load, load_vector
from .pod import InnerProductSpec, compute_pod_basis
from .rom import assemble_rom, full_load_matrix, rom_step_sequence
from .snapshots import SnapshotSet, TimeGrid, state_solve, trapezoidal_weights

__all__ = [
    "SnapshotPlacement",
    "PlacementSetup",
    "OptimizationResult",
    "merge_instants",
    "objective",
    "optimize_placement",
    "scan_objective",
    "save_trace",
]

DUPLICATE_TOL = 1e-13


def merge_instants(base, tau, horizon):
    """Sorted union of base instants and ``tau`` with trapezoid weights.

    Coincident instants are merged into one entry that carries the sum of
    their weights. Returns ``(times, weights, multiplicity)``.
    """
    pts = np.concatenate([np.asarray(base, dtype=float), np.asarray(tau, dtype=float)])
    pts = np.sort(pts, kind="stable")
    w = trapezoidal_weights(pts) if pts.size > 1 else np.array([horizon])
    times, weights, mult = [pts[0]], [w[0]], [1]
    for t, a in zip(pts[1:], w[1:]):
        if t - times[-1] <= DUPLICATE_TOL * max(horizon, 1.0):
            weights[-1] += a
            mult[-1] += 1
        else:
            times.append(t)
            weights.append(a)
            mult.append(1)
    return np.array(times), np.array(weights), np.array(mult)


@dataclass(frozen=True, eq=False)
class SnapshotPlacement:
    """Extra instants ``tau`` on top of ``base_grid`` and the merged weights."""

    tau: np.ndarray
    base_grid: TimeGrid
    merged_times: np.ndarray = field(init=False)
    merged_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float)).copy()
        horizon = self.base_grid.horizon
        if tau.ndim != 1:
            raise InvalidArgumentError("tau must be a vector")
        if np.any(~np.isfinite(tau)) or np.any(tau < 0.0) or np.any(tau > horizon):
            raise InvalidArgumentError(f"every tau must lie in [0, {horizon}]")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        times, weights, _ = merge_instants(self.base_grid.instants, tau, horizon)
        object.__setattr__(self, "merged_times", times)
        object.__setattr__(self, "merged_weights", weights)

    @property
    def k(self):
        return self.tau.size


class PlacementSetup:
    """Everything the objective needs that does not depend on ``tau``.

    Parameters
    ----------
    problem : ModelProblem
    grid : Grid1D
    base_grid : TimeGrid
        Instants of the fixed snapshots.
    fine_grid : TimeGrid
        Reference time grid; the ROM is solved and compared on it.
    space : str
        Inner product for POD and for the error norm (``"V"`` by default).
    ell : int
    treatment : {"none", "full"}
    """

    def __init__(self, problem, grid, base_grid, fine_grid, space="V", ell=3, treatment=None, flag="svd",
                 newton_tol=1e-10):
        if not np.isclose(fine_grid.horizon, base_grid.horizon):
            raise InvalidArgumentError("base and fine time grids must end at the same horizon")
        if treatment is None:
            treatment = "full" if problem.cubic else "none"
        if treatment not in ("none", "full"):
            raise InvalidArgumentError("snapshot placement supports the 'none' and 'full' treatments")
        self.problem = problem
        self.grid = grid
        self.base_grid = base_grid
        self.fine_grid = fine_grid
        self.space = space if isinstance(space, InnerProductSpec) else InnerProductSpec(space)
        self.ell = int(ell)
        self.treatment = treatment
        self.flag = flag
        self.newton_tol = newton_tol
        self.reference = state_solve(grid, problem, fine_grid, newton_tol=newton_tol)
        self.fe = assemble(grid, problem)
        self.weight = self.space.weight_matrix(grid, problem.dirichlet)
        self.loads = full_load_matrix(grid, problem, fine_grid, "endpoint")
        self._memo = {}

    @property
    def horizon(self):
        return self.base_grid.horizon

    def state_at(self, t):
        """Full-order state at ``t`` from a solve on the fine grid augmented by ``t``.

        Up to the last fine instant before ``t`` the augmented solve coincides
        with the reference, so only the final partial step is taken.
        """
        inst = self.fine_grid.instants
        ref = self.reference.matrix()
        f = int(np.clip(np.searchsorted(inst, t, side="right") - 1, 0, inst.size - 1))
        dt = t - inst[f]
        if dt <= DUPLICATE_TOL * max(self.horizon, 1.0):
            return ref[:, f].copy()
        problem = self.problem
        fe = assemble(self.grid, problem, t) if problem.time_dependent else self.fe
        k_mat = (fe.mass + dt * fe.operator).tocsc()
        rhs = fe.mass @ ref[:, f] + dt * load_vector(self.grid, problem, t)
        if problem.cubic == 0.0:
            return spla.spsolve(k_mat, rhs)
        y = ref[:, min(f + 1, inst.size - 1)].copy()
        for _ in range(50):
            res = k_mat @ y + dt * cubic_load(self.grid, y, problem.cubic) - rhs
            if np.linalg.norm(res) <= self.newton_tol * (1.0 + np.linalg.norm(rhs)):
                return y
            y = y - spla.spsolve((k_mat + dt * cubic_jacobian(self.grid, y, problem.cubic)).tocsc(), res)
        return y

    def snapshot_set(self, placement):
        times, weights, _ = merge_instants(self.base_grid.instants, placement.tau, self.horizon)
        states = np.column_stack([self.state_at(t) for t in times])
        return SnapshotSet.from_matrix(self.grid, states, weights, times, inner_product=self.space.selector)

    def evaluate(self, tau):
        """Objective value for ``tau`` (order of the entries is irrelevant)."""
        tau = np.sort(np.atleast_1d(np.asarray(tau, dtype=float)))
        key = tuple(tau.tolist())
        if key in self._memo:
            return self._memo[key]
        placement = SnapshotPlacement(tau, self.base_grid)
        snaps = self.snapshot_set(placement)
        basis = compute_pod_basis(snaps, self.space, self.ell, flag=self.flag)
        system = assemble_rom(
            basis,
            snaps,
            self.problem,
            self.treatment,
            tgrid=self.fine_grid,
            load_mode="endpoint",
            newton_tol=self.newton_tol,
            full_loads=self.loads,
        )
        eta = rom_step_sequence(system).eta
        diff = self.reference.matrix() - basis.modes @ eta
        val = float(np.sum(self.reference.weights * np.einsum("ij,ij->j", diff, self.weight @ diff)))
        self._memo[key] = val
        return val


def objective(placement, setup):
    """Squared discrete ``L2(0,T;X)`` ROM error for a placement (``k = 0`` gives the baseline)."""
    tau = placement.tau if isinstance(placement, SnapshotPlacement) else placement
    return setup.evaluate(tau)


@dataclass(eq=False)
class OptimizationResult:
    placement: SnapshotPlacement
    value: float
    initial_value: float
    trace: list
    complete: bool
    evaluations: int
    restarts: int
    method: str

    @property
    def reduction(self):
        if self.initial_value <= 0:
            return 0.0
        return 1.0 - self.value / self.initial_value

    def best_so_far(self):
        return np.minimum.accumulate([row[-1] for row in self.trace])


class _BudgetExhausted(Exception):
    pass


def optimize_placement(tau0, setup, budget=600, seed=0, method="nelder-mead", xatol=1e-4, fatol=1e-12,
                       max_restarts=20):
    """Box-constrained minimization of :func:`objective` starting from ``tau0``.

    ``nelder-mead`` runs the bounded simplex method. Whenever the simplex
    collapses it restarts: around the best point if the last run improved
    it, otherwise from a uniformly drawn point (the objective is flat over
    stretches where the dynamics have settled, and a simplex there learns
    nothing). Restarts stop at ``max_restarts`` or when the evaluation budget
    is spent, in which case the result is flagged incomplete.
    ``lbfgsb`` uses finite-difference gradients instead. The result is
    deterministic for given ``tau0``, ``seed`` and budget.
    """
    tau0 = np.atleast_1d(np.asarray(tau0, dtype=float))
    k = tau0.size
    if k < 1:
        raise InvalidArgumentError("need at least one extra instant")
    if budget < k + 1:
        raise InvalidArgumentError(f"budget must be at least k + 1 = {k + 1}")
    if method not in ("nelder-mead", "lbfgsb"):
        raise InvalidArgumentError(f"unknown method {method!r}")
    horizon = setup.horizon
    SnapshotPlacement(tau0, setup.base_grid)
    rng = np.random.default_rng(seed)
    trace = []
    best = {"x": np.sort(tau0), "f": np.inf}

    def fun(x):
        if len(trace) >= budget:
            raise _BudgetExhausted
        x = np.clip(np.asarray(x, dtype=float), 0.0, horizon)
        val = setup.evaluate(x)
        trace.append([len(trace)] + list(np.sort(x)) + [val])
        if val < best["f"]:
            best["x"], best["f"] = np.sort(x), val
        return val

    bounds = [(0.0, horizon)] * k
    complete = True
    restarts = 0
    try:
        initial_value = fun(tau0)
        if method == "lbfgsb":
            sopt.minimize(fun, tau0, method="L-BFGS-B", bounds=bounds,
                          options={"maxfun": budget, "eps": 1e-6 * horizon})
        else:
            start = tau0.copy()
            step = 0.1 * horizon
            while True:
                prev = best["f"]
                sopt.minimize(fun, start, method="Nelder-Mead", bounds=bounds,
                              options={"initial_simplex": _initial_simplex(start, step, horizon),
                                       "xatol": xatol, "fatol": fatol, "maxfev": budget})
                if restarts >= max_restarts:
                    break
                restarts += 1
                if best["f"] < prev * (1.0 - 1e-9):
                    # polish around the new best point
                    start, step = best["x"].copy(), 0.05 * horizon
                else:
                    # no progress: the simplex sat on a plateau, start elsewhere
                    start, step = rng.uniform(0.0, horizon, k), 0.1 * horizon
    except _BudgetExhausted:
        complete = False
    placement = SnapshotPlacement(best["x"], setup.base_grid)
    return OptimizationResult(
        placement=placement,
        value=best["f"],
        initial_value=initial_value,
        trace=trace,
        complete=complete,
        evaluations=len(trace),
        restarts=restarts,
        method=method,
    )


def _initial_simplex(x0, step, horizon):
    k = x0.size
    pts = [x0]
    for i in range(k):
        d = np.zeros(k)
        d[i] = step
        p = x0 + d
        if not 0.0 <= p[i] <= horizon:
            p = x0 - d
        pts.append(np.clip(p, 0.0, horizon))
    return np.array(pts)


def scan_objective(setup, points, k=2, workers=1):
    """Objective on a tensor grid of candidate instants.

    For ``k = 2`` only ``tau_1 <= tau_2`` is evaluated and mirrored, since the
    objective is symmetric. Returns an array of shape ``(len(points),) * k``.
    """
    points = np.asarray(points, dtype=float)
    n = points.size
    if k == 1:
        cells = [(i,) for i in range(n)]
    elif k == 2:
        cells = [(i, j) for i in range(n) for j in range(i, n)]
    else:
        raise InvalidArgumentError("scans are provided for k = 1 and k = 2")

    def run(cell):
        return setup.evaluate(points[list(cell)])

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(run, cells))
    else:
        vals = [run(c) for c in cells]
    out = np.empty((n,) * k)
    for cell, v in zip(cells, vals):
        out[cell] = v
        out[cell[::-1]] = v
    return out


def save_trace(result, path):
    k = result.placement.k
    cols = ["iteration"] + [f"tau_{i + 1}" for i in range(k)] + ["objective"]
    meta = [
        ("format", "podrom-snapopt-trace-v1"),
        ("method", result.method),
        ("complete", str(result.complete).lower()),
        ("tau", list(result.placement.tau)),
        ("objective", result.value),
        ("initial_objective", result.initial_value),
    ]
    return tio.write_table(path, meta, cols, result.trace)
