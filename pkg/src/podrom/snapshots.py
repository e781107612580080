"""Full-order implicit Euler time stepping and weighted snapshot sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import io as tio
from .errors import ConvergenceError, InvalidArgumentError, UnsupportedOperationError
from .mesh import (
    Grid1D,
    assemble,
    cubic_jacobian,
    cubic_load,
    initial_moments,
    interpolation_matrix,
    load_vector,
)

__all__ = [
    "TimeGrid",
    "SnapshotSet",
    "trapezoidal_weights",
    "state_solve",
    "state_solve_on_grids",
    "append_difference_quotients",
    "save_snapshots",
    "load_snapshots",
]


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing instants ``0 = t_1 < ... < t_nt = T``."""

    instants: np.ndarray

    def __post_init__(self):
        t = np.array(self.instants, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InvalidArgumentError("a time grid needs at least two instants")
        if t[0] != 0.0:
            raise InvalidArgumentError("time grid must start at 0")
        if np.any(np.diff(t) <= 0.0):
            raise InvalidArgumentError("time instants must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "instants", t)

    @classmethod
    def uniform(cls, horizon, n_t):
        """``t_j = (j - 1) dt`` with ``dt = T / (n_t - 1)``."""
        if n_t < 2:
            raise InvalidArgumentError("need n_t >= 2")
        t = horizon * np.arange(n_t) / (n_t - 1)
        t[-1] = horizon
        return cls(t)

    @property
    def steps(self):
        return np.diff(self.instants)

    @property
    def horizon(self):
        return float(self.instants[-1])

    def __len__(self):
        return self.instants.size

    def same_as(self, other):
        return self is other or np.array_equal(self.instants, other.instants)


def trapezoidal_weights(tgrid):
    """Trapezoid-rule weights; they sum to the horizon."""
    t = tgrid.instants if isinstance(tgrid, TimeGrid) else np.asarray(tgrid, dtype=float)
    if t.size < 2:
        raise InvalidArgumentError("need at least two instants")
    dt = np.diff(t)
    alpha = np.empty(t.size)
    alpha[0] = dt[0] / 2
    alpha[-1] = dt[-1] / 2
    alpha[1:-1] = (dt[:-1] + dt[1:]) / 2
    return alpha


@dataclass(eq=False)
class SnapshotSet:
    """Weighted snapshots, each an FE coefficient vector on its own grid.

    ``ensemble`` tags entries with the ensemble index (0 = trajectory,
    1 = difference quotients). ``times`` records the instant of each entry.
    """

    grids: tuple
    coefficients: tuple
    weights: np.ndarray
    times: np.ndarray
    ensemble: np.ndarray
    inner_product: str = "H"
    time_grid: TimeGrid | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grids = tuple(self.grids)
        self.coefficients = tuple(np.asarray(c, dtype=float) for c in self.coefficients)
        self.weights = np.asarray(self.weights, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.ensemble = np.asarray(self.ensemble, dtype=int)
        n = len(self.coefficients)
        if n == 0:
            raise InvalidArgumentError("empty snapshot set")
        if not (len(self.grids) == n == self.weights.size == self.times.size == self.ensemble.size):
            raise InvalidArgumentError("snapshot set fields have inconsistent lengths")
        if np.any(self.weights <= 0.0):
            raise InvalidArgumentError("snapshot weights must be positive")
        if self.inner_product not in ("H", "V"):
            raise InvalidArgumentError(f"inner product must be 'H' or 'V', got {self.inner_product!r}")
        for g, c in zip(self.grids, self.coefficients):
            g.is_dirichlet_layout(c)
        self._matrix = None

    @classmethod
    def from_matrix(cls, grid, ymat, weights, times, ensemble=None, inner_product="H", time_grid=None, info=None):
        ymat = np.asarray(ymat, dtype=float)
        n = ymat.shape[1]
        obj = cls(
            grids=(grid,) * n,
            coefficients=tuple(ymat.T),
            weights=weights,
            times=times,
            ensemble=np.zeros(n, dtype=int) if ensemble is None else ensemble,
            inner_product=inner_product,
            time_grid=time_grid,
            info=dict(info or {}),
        )
        obj._matrix = ymat.copy()
        obj._matrix.setflags(write=False)
        return obj

    def __len__(self):
        return len(self.coefficients)

    @property
    def homogeneous(self):
        g0 = self.grids[0]
        return all(g is g0 or g.same_as(g0) for g in self.grids[1:])

    @property
    def grid(self):
        if not self.homogeneous:
            raise UnsupportedOperationError("snapshots live on different grids")
        return self.grids[0]

    def matrix(self):
        """Snapshot matrix ``Y`` with one coefficient column per entry."""
        if self._matrix is None:
            if not self.homogeneous:
                raise UnsupportedOperationError("snapshots live on different grids")
            self._matrix = np.column_stack(self.coefficients)
            self._matrix.setflags(write=False)
        return self._matrix

    @property
    def dirichlet(self):
        return self.grids[0].is_dirichlet_layout(self.coefficients[0])

    @property
    def n_ensembles(self):
        return int(self.ensemble.max()) + 1

    def trajectory_indices(self):
        return np.flatnonzero(self.ensemble == 0)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return SnapshotSet(
            grids=[self.grids[i] for i in idx],
            coefficients=[self.coefficients[i] for i in idx],
            weights=self.weights[idx],
            times=self.times[idx],
            ensemble=self.ensemble[idx],
            inner_product=self.inner_product,
            time_grid=self.time_grid,
            info=dict(self.info),
        )

    def with_inner_product(self, selector):
        out = self.subset(np.arange(len(self)))
        out.inner_product = selector
        out._matrix = self._matrix
        return out

    def with_weights(self, weights):
        out = self.subset(np.arange(len(self)))
        out.weights = np.asarray(weights, dtype=float)
        if out.weights.shape != self.weights.shape or np.any(out.weights <= 0):
            raise InvalidArgumentError("replacement weights must be positive and of equal length")
        out._matrix = self._matrix
        return out

    def values_on(self, nodes):
        """Nodal values of every snapshot interpolated to ``nodes`` (exact for refinements)."""
        nodes = np.asarray(nodes, dtype=float)
        cols = []
        cache = {}
        for g, c in zip(self.grids, self.coefficients):
            key = id(g)
            if key not in cache:
                cache[key] = interpolation_matrix(g.nodes, nodes)
            cols.append(cache[key] @ g.nodal_values(c))
        return np.column_stack(cols)


def _key(dt):
    return float(f"{dt:.12e}")


def _step_solver(matrix, cache, key):
    if key not in cache:
        cache[key] = spla.splu(matrix.tocsc())
    return cache[key]


def _newton(grid, k_mat, dt, c3, rhs, y0, tol, max_iter, step):
    y = y0.copy()
    rhs_norm = np.linalg.norm(rhs)
    increments = []
    for it in range(max_iter + 1):
        res = k_mat @ y + dt * cubic_load(grid, y, c3) - rhs
        rnorm = np.linalg.norm(res)
        if rnorm <= tol * (1.0 + rhs_norm):
            return y, it, increments
        if it == max_iter:
            break
        jac = (k_mat + dt * cubic_jacobian(grid, y, c3)).tocsc()
        delta = spla.spsolve(jac, -res)
        increments.append(float(np.linalg.norm(delta)))
        y = y + delta
        if not np.all(np.isfinite(y)):
            break
    raise ConvergenceError(
        f"Newton did not converge at time step {step} (residual {rnorm:.3e})",
        residual=float(rnorm),
        iterations=max_iter,
        step=step,
    )


def _project_initial(grid, problem):
    fe = assemble(grid, problem)
    return fe.mass_lu.solve(initial_moments(grid, problem))


def state_solve(grid, problem, tgrid, newton_tol=1e-10, newton_max=30, inner_product="H"):
    """Implicit Euler trajectory of the FE system, initial projection included.

    Each step solves ``(M + dt A) y_j + dt N(y_j) = M y_{j-1} + dt F(t_j)``;
    a single sparse solve for linear problems, undamped Newton otherwise.
    """
    if not newton_tol > 0:
        raise InvalidArgumentError("newton_tol must be positive")
    if not np.isclose(tgrid.horizon, problem.horizon):
        raise InvalidArgumentError("time grid does not end at the problem horizon")
    return state_solve_on_grids([grid] * len(tgrid), problem, tgrid, newton_tol, newton_max, inner_product)


def state_solve_on_grids(grids, problem, tgrid, newton_tol=1e-10, newton_max=30, inner_product="H"):
    """Implicit Euler with a possibly different spatial grid at every instant.

    The previous state is carried to the next grid by nodal interpolation
    before each step.
    """
    grids = list(grids)
    if len(grids) != len(tgrid):
        raise InvalidArgumentError("need one grid per time instant")
    t = tgrid.instants
    dts = tgrid.steps
    c3 = problem.cubic
    ys = [_project_initial(grids[0], problem)]
    fe = None
    fe_grid = None
    solvers = {}
    newton_iters = []
    newton_tail = []
    for j in range(1, len(t)):
        g = grids[j]
        if fe is None or problem.time_dependent or not g.same_as(fe_grid):
            fe = assemble(g, problem, t[j])
            fe_grid = g
            solvers = {}
        y_prev = ys[-1]
        if not g.same_as(grids[j - 1]):
            vals = interpolation_matrix(grids[j - 1].nodes, g.nodes) @ grids[j - 1].nodal_values(y_prev)
            y_prev = vals[1:-1] if problem.dirichlet else vals
        dt = dts[j - 1]
        k_mat = fe.mass + dt * fe.operator
        rhs = fe.mass @ y_prev + dt * load_vector(g, problem, t[j])
        if c3 == 0.0:
            y = _step_solver(k_mat, solvers, _key(dt)).solve(rhs)
        else:
            y, its, incs = _newton(g, k_mat, dt, c3, rhs, y_prev, newton_tol, newton_max, j)
            newton_iters.append(its)
            if len(incs) >= 2 and incs[-2] > 0:
                newton_tail.append(incs[-1] / incs[-2] ** 2)
        ys.append(y)
    info = {}
    if c3 != 0.0:
        info = {"newton_iterations": newton_iters, "newton_tail_ratios": newton_tail}
    weights = trapezoidal_weights(tgrid)
    if all(g.same_as(grids[0]) for g in grids):
        return SnapshotSet.from_matrix(
            grids[0], np.column_stack(ys), weights, t, inner_product=inner_product, time_grid=tgrid, info=info
        )
    return SnapshotSet(
        grids=grids,
        coefficients=ys,
        weights=weights,
        times=t,
        ensemble=np.zeros(len(t), dtype=int),
        inner_product=inner_product,
        time_grid=tgrid,
        info=info,
    )


def append_difference_quotients(snapshots):
    """Add the ensemble of temporal difference quotients with the same weights.

    The first quotient is zero, then ``(y_j - y_{j-1}) / dt_j``.
    """
    if not snapshots.homogeneous:
        raise UnsupportedOperationError("difference quotients need snapshots on one grid")
    if snapshots.n_ensembles != 1:
        raise UnsupportedOperationError("snapshot set already has several ensembles")
    y = snapshots.matrix()
    dt = np.diff(snapshots.times)
    if np.any(dt <= 0):
        raise InvalidArgumentError("snapshot times must be strictly increasing")
    dq = np.zeros_like(y)
    dq[:, 1:] = np.diff(y, axis=1) / dt
    n = y.shape[1]
    return SnapshotSet.from_matrix(
        snapshots.grid,
        np.hstack([y, dq]),
        np.concatenate([snapshots.weights, snapshots.weights]),
        np.concatenate([snapshots.times, snapshots.times]),
        ensemble=np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)]),
        inner_product=snapshots.inner_product,
        time_grid=snapshots.time_grid,
        info=snapshots.info,
    )


# -- serialization --------------------------------------------------------------------


def save_snapshots(snapshots, path):
    """Write a snapshot set; reading it back with :func:`load_snapshots` is bit exact."""
    grid_ids = {}
    unique = []
    for g in snapshots.grids:
        for k, u in enumerate(unique):
            if g is u or g.same_as(u):
                grid_ids.setdefault(id(g), k)
                break
        else:
            grid_ids[id(g)] = len(unique)
            unique.append(g)
    meta = [("format", "podrom-snapshots-v1"), ("inner_product", snapshots.inner_product)]
    if snapshots.time_grid is not None:
        meta.append(("time_grid", list(snapshots.time_grid.instants)))
    for k, g in enumerate(unique):
        meta.append(("grid", [k] + list(g.nodes)))
    rows = (
        [t, a, e, grid_ids[id(g)]] + list(c)
        for t, a, e, g, c in zip(
            snapshots.times, snapshots.weights, snapshots.ensemble, snapshots.grids, snapshots.coefficients
        )
    )
    return tio.write_table(path, meta, ["t", "alpha", "ensemble", "grid", "coefficients..."], rows)


def load_snapshots(path):
    meta, _, rows = tio.read_table(path)
    if tio.meta_lookup(meta, "format")[0] != "podrom-snapshots-v1":
        raise InvalidArgumentError(f"{path} is not a snapshot file")
    selector = tio.meta_lookup(meta, "inner_product")[0]
    tgrid = None
    tg = [v for k, v in meta if k == "time_grid"]
    if tg:
        tgrid = TimeGrid(np.array([float(x) for x in tg[0]]))
    grids = {}
    for vals in tio.meta_lookup(meta, "grid", many=True):
        grids[int(vals[0])] = Grid1D(np.array([float(x) for x in vals[1:]]))
    times, weights, ens, gl, coeffs = [], [], [], [], []
    for r in rows:
        times.append(float(r[0]))
        weights.append(float(r[1]))
        ens.append(int(r[2]))
        gl.append(grids[int(r[3])])
        coeffs.append(np.array([float(x) for x in r[4:]]))
    return SnapshotSet(
        grids=gl,
        coefficients=coeffs,
        weights=np.array(weights),
        times=np.array(times),
        ensemble=np.array(ens),
        inner_product=selector,
        time_grid=tgrid,
    )
