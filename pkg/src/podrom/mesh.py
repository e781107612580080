"""Piecewise-linear finite elements on 1D grids.

Coefficient vectors follow one convention throughout the package: a vector of
length ``n_nodes - 2`` holds interior values (homogeneous Dirichlet problems),
a vector of length ``n_nodes`` holds all nodal values (Robin problems).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError

__all__ = [
    "Grid1D",
    "RobinBoundary",
    "ModelProblem",
    "FeMatrices",
    "build_grid",
    "assemble",
    "load_vector",
    "interpolate_initial",
    "initial_moments",
    "merge_nodes",
    "interpolation_matrix",
    "gramian_between",
    "cubic_load",
    "cubic_jacobian",
    "gauss_rule",
]

PROBLEM_KINDS = ("linear_heat", "convection_reaction_diffusion", "semilinear_cubic")


def gauss_rule(npts):
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Nodes of a 1D mesh, boundary nodes included."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise InvalidArgumentError("a grid needs at least 3 nodes")
        if not np.all(np.isfinite(nodes)):
            raise InvalidArgumentError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            raise InvalidArgumentError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def interval(self):
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def n_nodes(self):
        return self.nodes.size

    @property
    def n_interior(self):
        return self.nodes.size - 2

    @property
    def spacings(self):
        return np.diff(self.nodes)

    def same_as(self, other):
        return self is other or (
            self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)
        )

    def n_dofs(self, dirichlet=True):
        return self.n_interior if dirichlet else self.n_nodes

    def is_dirichlet_layout(self, coeffs):
        """Tell which layout a coefficient vector (or matrix with rows = dofs) uses."""
        n = np.shape(coeffs)[0]
        if n == self.n_interior:
            return True
        if n == self.n_nodes:
            return False
        raise InvalidArgumentError(
            f"coefficient length {n} fits neither {self.n_interior} interior "
            f"nor {self.n_nodes} nodal values"
        )

    def nodal_values(self, coeffs):
        """Expand coefficients to all nodes (zero boundary values for Dirichlet layout)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if self.is_dirichlet_layout(coeffs):
            pad = [(1, 1)] + [(0, 0)] * (coeffs.ndim - 1)
            return np.pad(coeffs, pad)
        return coeffs

    def evaluate(self, coeffs, x):
        """Evaluate the FE function with the given coefficients at points ``x``."""
        return np.interp(x, self.nodes, self.nodal_values(coeffs))

    def __repr__(self):
        a, b = self.interval
        return f"Grid1D(n_nodes={self.n_nodes}, interval=({a:g}, {b:g}))"


def build_grid(a, b, m):
    """Uniform grid on ``(a, b)`` with ``m`` interior nodes, spacing ``(b - a)/(m + 1)``."""
    if not b > a:
        raise InvalidArgumentError(f"need b > a, got a={a}, b={b}")
    if int(m) != m or m < 1:
        raise InvalidArgumentError(f"need at least one interior node, got m={m}")
    m = int(m)
    nodes = a + (b - a) * np.arange(m + 2) / (m + 1)
    nodes[-1] = b
    return Grid1D(nodes)


def merge_nodes(*node_arrays, rel_tol=1e-13):
    """Sorted union of node sets; points closer than ``rel_tol * length`` are merged."""
    allnodes = np.sort(np.concatenate([np.asarray(n, dtype=float) for n in node_arrays]))
    length = allnodes[-1] - allnodes[0]
    keep = np.ones(allnodes.size, dtype=bool)
    keep[1:] = np.diff(allnodes) > rel_tol * length
    merged = allnodes[keep]
    # the right end point must survive exactly
    merged[-1] = allnodes[-1]
    return merged


def interpolation_matrix(source_nodes, target_points):
    """Sparse matrix mapping nodal values on ``source_nodes`` to values at ``target_points``."""
    src = np.asarray(source_nodes, dtype=float)
    x = np.asarray(target_points, dtype=float)
    idx = np.clip(np.searchsorted(src, x, side="right") - 1, 0, src.size - 2)
    w = (x - src[idx]) / (src[idx + 1] - src[idx])
    w = np.clip(w, 0.0, 1.0)
    rows = np.arange(x.size)
    data = np.concatenate([1.0 - w, w])
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([idx, idx + 1]))),
        shape=(x.size, src.size),
    )


# -- closed-form element matrices on all nodes ------------------------------------


def _tridiag(diag, off_lower, off_upper):
    return sp.diags([off_lower, diag, off_upper], [-1, 0, 1], format="csr")


def _mass_full(nodes):
    h = np.diff(nodes)
    diag = np.zeros(nodes.size)
    diag[:-1] += h / 3.0
    diag[1:] += h / 3.0
    return _tridiag(diag, h / 6.0, h / 6.0)


def _stiffness_full(nodes):
    h = np.diff(nodes)
    diag = np.zeros(nodes.size)
    diag[:-1] += 1.0 / h
    diag[1:] += 1.0 / h
    return _tridiag(diag, -1.0 / h, -1.0 / h)


def _advection_full(nodes):
    # entry (i, j) = int phi_j' phi_i; on an element phi' = -+1/h and int phi_i = h/2
    n = nodes.size
    diag = np.zeros(n)
    diag[:-1] -= 0.5
    diag[1:] += 0.5
    upper = np.full(n - 1, 0.5)
    lower = np.full(n - 1, -0.5)
    return _tridiag(diag, lower, upper)


def _restrict(mat, dirichlet):
    if not dirichlet:
        return mat.tocsr()
    return mat.tocsr()[1:-1, 1:-1]


def gramian_between(nodes_a, nodes_b, kind="H"):
    """Exact matrix of inner products between hat functions of two grids.

    Entry ``(k, l)`` is ``<phi_k^a, phi_l^b>`` over all nodes of both grids,
    where ``kind`` is ``"H"`` (L2) or ``"V"`` (gradient inner product). Both
    function families are piecewise linear on the merged node set, so the
    merged-grid Gramian is exact.
    """
    nodes_a = np.asarray(nodes_a, dtype=float)
    nodes_b = np.asarray(nodes_b, dtype=float)
    if not (np.isclose(nodes_a[0], nodes_b[0]) and np.isclose(nodes_a[-1], nodes_b[-1])):
        raise InvalidArgumentError("grids cover different intervals")
    merged = merge_nodes(nodes_a, nodes_b)
    w = _full_gramian(merged, kind)
    pa = interpolation_matrix(nodes_a, merged)
    pb = interpolation_matrix(nodes_b, merged)
    return (pa.T @ w @ pb).tocsr()


def _full_gramian(nodes, kind):
    if kind == "H":
        return _mass_full(nodes)
    if kind == "V":
        return _stiffness_full(nodes)
    if kind == "H1":
        return _stiffness_full(nodes) + _mass_full(nodes)
    raise InvalidArgumentError(f"unknown inner product {kind!r}")


# -- model problems -----------------------------------------------------------------


def _zero_forcing(t, x):
    return np.zeros_like(x)


def _zero_initial(x):
    return np.zeros_like(x)


@dataclass(frozen=True)
class RobinBoundary:
    """Data for ``c dy/dn + q y = g`` at the left and right end points."""

    q_left: float = 0.0
    g_left: float = 0.0
    q_right: float = 0.0
    g_right: float = 0.0


@dataclass(frozen=True)
class ModelProblem:
    """Parabolic model problem ``y_t - c y_xx + beta y_x + a y + c3 y^3 = f``.

    ``forcing`` takes ``(t, x)`` and ``initial`` takes ``x``; both must accept
    numpy arrays for ``x``. Breakpoint lists mark points where the data is
    discontinuous or has kinks so quadrature can split elements there.
    ``coefficients`` optionally maps ``t`` to ``(c, beta, a)`` for
    time-dependent operators.
    """

    kind: str = "linear_heat"
    diffusivity: float = 1.0
    velocity: float = 0.0
    reaction: float = 0.0
    cubic: float = 0.0
    forcing: Callable = _zero_forcing
    initial: Callable = _zero_initial
    domain: tuple = (0.0, 1.0)
    horizon: float = 1.0
    boundary: RobinBoundary | None = None
    forcing_breakpoints: tuple = ()
    initial_breakpoints: tuple = ()
    coefficients: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise InvalidArgumentError(f"unknown problem kind {self.kind!r}")
        if not self.diffusivity > 0:
            raise InvalidArgumentError("diffusivity must be positive")
        if not self.horizon > 0:
            raise InvalidArgumentError("time horizon must be positive")
        if self.cubic < 0:
            raise InvalidArgumentError("cubic coefficient must be nonnegative")
        if self.kind == "linear_heat" and (self.cubic != 0 or self.velocity != 0):
            raise InvalidArgumentError("linear_heat allows neither convection nor a cubic term")
        if self.kind == "convection_reaction_diffusion" and self.cubic != 0:
            raise InvalidArgumentError("convection_reaction_diffusion is linear")
        a, b = self.domain
        if not b > a:
            raise InvalidArgumentError("domain must satisfy a < b")

    @property
    def dirichlet(self):
        return self.boundary is None

    @property
    def time_dependent(self):
        return self.coefficients is not None

    def coefficients_at(self, t):
        if self.coefficients is None:
            return self.diffusivity, self.velocity, self.reaction
        c, beta, a = self.coefficients(t)
        if not c > 0:
            raise InvalidArgumentError(f"diffusivity must stay positive (t={t})")
        return c, beta, a


@dataclass(frozen=True, eq=False)
class FeMatrices:
    """Assembled FE matrices restricted to the degrees of freedom."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    advection: sp.csr_matrix
    boundary: sp.csr_matrix
    diffusivity: float
    velocity: float
    reaction_scale: float
    dirichlet: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def operator(self):
        """Matrix of the bilinear form, ``c S + beta B + a M`` plus Robin terms."""
        if "operator" not in self._cache:
            self._cache["operator"] = (
                self.diffusivity * self.stiffness
                + self.velocity * self.advection
                + self.reaction_scale * self.mass
                + self.boundary
            ).tocsr()
        return self._cache["operator"]

    @property
    def mass_lu(self):
        if "mass_lu" not in self._cache:
            self._cache["mass_lu"] = spla.splu(self.mass.tocsc())
        return self._cache["mass_lu"]


def _check_domain(grid, problem):
    a, b = grid.interval
    pa, pb = problem.domain
    if not (np.isclose(a, pa) and np.isclose(b, pb)):
        raise InvalidArgumentError(f"grid interval {(a, b)} differs from problem domain {problem.domain}")


def assemble(grid, problem, t=0.0):
    """Mass, stiffness and advection matrices for ``problem`` on ``grid``.

    For time-dependent coefficients the operator is evaluated at time ``t``.
    """
    _check_domain(grid, problem)
    c, beta, a = problem.coefficients_at(t)
    dirichlet = problem.dirichlet
    nodes = grid.nodes
    boundary = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
    if not dirichlet:
        rb = problem.boundary
        bdiag = np.zeros(grid.n_nodes)
        bdiag[0] = rb.q_left
        bdiag[-1] = rb.q_right
        boundary = sp.diags(bdiag, format="csr")
    return FeMatrices(
        mass=_restrict(_mass_full(nodes), dirichlet),
        stiffness=_restrict(_stiffness_full(nodes), dirichlet),
        advection=_restrict(_advection_full(nodes), dirichlet),
        boundary=_restrict(boundary, dirichlet),
        diffusivity=c,
        velocity=beta,
        reaction_scale=a,
        dirichlet=dirichlet,
    )


# -- data terms ---------------------------------------------------------------------


def _moments(nodes, func, breakpoints=(), npts=3):
    """``int func * phi_k`` for every node, Gauss quadrature on breakpoint-split elements."""
    a, b = nodes[0], nodes[-1]
    bps = np.asarray([p for p in breakpoints if a < p < b], dtype=float)
    pieces = merge_nodes(nodes, bps) if bps.size else nodes
    s0, s1 = pieces[:-1], pieces[1:]
    elem = np.clip(np.searchsorted(nodes, 0.5 * (s0 + s1), side="right") - 1, 0, nodes.size - 2)
    xl, xr = nodes[elem], nodes[elem + 1]
    xi, w = gauss_rule(npts)
    xq = s0[:, None] + (s1 - s0)[:, None] * xi[None, :]
    fq = np.broadcast_to(np.asarray(func(xq), dtype=float), xq.shape)
    wq = (s1 - s0)[:, None] * w[None, :] * fq
    he = (xr - xl)[:, None]
    left = (wq * (xr[:, None] - xq) / he).sum(axis=1)
    right = (wq * (xq - xl[:, None]) / he).sum(axis=1)
    out = np.zeros(nodes.size)
    np.add.at(out, elem, left)
    np.add.at(out, elem + 1, right)
    return out


def load_vector(grid, problem, t):
    """Load vector ``(<f(t), phi_i>)_i`` including Robin boundary data."""
    if not (0.0 <= t <= problem.horizon * (1 + 1e-12)):
        raise InvalidArgumentError(f"time {t} outside [0, {problem.horizon}]")
    _check_domain(grid, problem)
    out = _moments(grid.nodes, lambda x: problem.forcing(t, x), problem.forcing_breakpoints)
    if problem.dirichlet:
        return out[1:-1]
    out[0] += problem.boundary.g_left
    out[-1] += problem.boundary.g_right
    return out


def initial_moments(grid, problem):
    """Vector ``(<y0, phi_i>_H)_i`` of the initial value against the hat functions."""
    _check_domain(grid, problem)
    out = _moments(grid.nodes, problem.initial, problem.initial_breakpoints)
    return out[1:-1] if problem.dirichlet else out


def interpolate_initial(grid, problem):
    """Coefficients of the L2 projection of the initial value onto the FE space."""
    fe = assemble(grid, problem)
    return fe.mass_lu.solve(initial_moments(grid, problem))


# -- cubic nonlinearity ------------------------------------------------------------------


def _element_values(nodes, vals, xi):
    return vals[:-1, None] * (1.0 - xi)[None, :] + vals[1:, None] * xi[None, :]


def cubic_load(grid, coeffs, c3, npts=3):
    """Vector ``(<c3 v^3, phi_i>)_i`` for the FE function ``v`` with the given coefficients."""
    nodes = grid.nodes
    dirichlet = grid.is_dirichlet_layout(coeffs)
    vals = grid.nodal_values(coeffs)
    xi, w = gauss_rule(npts)
    vq = _element_values(nodes, vals, xi)
    g = c3 * vq**3 * w[None, :] * np.diff(nodes)[:, None]
    out = np.zeros(nodes.size)
    out[:-1] += (g * (1.0 - xi)).sum(axis=1)
    out[1:] += (g * xi).sum(axis=1)
    return out[1:-1] if dirichlet else out


def weighted_mass(grid, coef_q, npts, dirichlet):
    """Matrix ``(int w phi_j phi_i)`` given weight values at the element Gauss points."""
    nodes = grid.nodes
    xi, w = gauss_rule(npts)
    cw = coef_q * w[None, :] * np.diff(nodes)[:, None]
    ll = (cw * (1.0 - xi) ** 2).sum(axis=1)
    lr = (cw * xi * (1.0 - xi)).sum(axis=1)
    rr = (cw * xi**2).sum(axis=1)
    diag = np.zeros(nodes.size)
    diag[:-1] += ll
    diag[1:] += rr
    return _restrict(_tridiag(diag, lr, lr), dirichlet)


def cubic_jacobian(grid, coeffs, c3, npts=3):
    """Jacobian ``(<3 c3 v^2 phi_j, phi_i>)_ij`` of :func:`cubic_load`."""
    dirichlet = grid.is_dirichlet_layout(coeffs)
    vals = grid.nodal_values(coeffs)
    xi, _ = gauss_rule(npts)
    vq = _element_values(grid.nodes, vals, xi)
    return weighted_mass(grid, 3.0 * c3 * vq**2, npts, dirichlet)


def weight_matrix(grid, kind, dirichlet=True):
    """Gramian of the hat functions for ``kind`` in {"H", "V"} on the dofs.

    ``V`` is the gradient inner product; without Dirichlet conditions it is only
    semidefinite, so the full H1 inner product is used instead.
    """
    if kind == "V" and not dirichlet:
        kind = "H1"
    return _restrict(_full_gramian(grid.nodes, kind), dirichlet)


def as_grid(obj: Grid1D | Sequence[float]):
    return obj if isinstance(obj, Grid1D) else Grid1D(np.asarray(obj, dtype=float))
