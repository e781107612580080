"""Weighted POD bases: SVD, covariance and correlation (method of snapshots) routes.

All routes solve the same problem: find ``W``-orthonormal modes maximizing the
weighted captured energy ``sum_j alpha_j |<y_j, psi>_X|^2``. With
``Ybar = W^(1/2) Y D^(1/2)``:

* ``svd``      singular value decomposition of ``Ybar``
* ``eig_yyt``  eigen-decomposition of ``Ybar Ybar^T`` (size m)
* ``eig_yty``  eigen-decomposition of ``Ybar^T Ybar = D^(1/2) Y^T W Y D^(1/2)`` (size n)

Snapshots on different grids go through :func:`cross_gramian` and
:func:`pod_from_gramian`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from . import io as tio
from .errors import InvalidArgumentError, RankDeficientError, UnsupportedOperationError
from .linalg import spd_sqrt, sym_eig
from .mesh import Grid1D, gramian_between, interpolation_matrix, merge_nodes, weight_matrix

__all__ = [
    "InnerProductSpec",
    "PodBasis",
    "CrossGramian",
    "compute_pod_basis",
    "weighted_pod",
    "cross_gramian",
    "pod_from_gramian",
    "energy_fraction",
    "select_rank",
    "project",
    "snapshot_energy",
    "save_basis",
    "load_basis",
    "save_spectrum",
]

EPS = 2.0**-52
FLAGS = ("svd", "eig_yyt", "eig_yty")


@dataclass(frozen=True)
class InnerProductSpec:
    """Choice of ``X``: ``"H"`` uses the mass matrix, ``"V"`` the stiffness matrix."""

    selector: str = "H"

    def __post_init__(self):
        if self.selector not in ("H", "V"):
            raise InvalidArgumentError(f"inner product must be 'H' or 'V', got {self.selector!r}")

    def weight_matrix(self, grid, dirichlet=True):
        return weight_matrix(grid, self.selector, dirichlet)

    def between(self, grid_a, grid_b, dirichlet=True):
        """Cross Gramian of the hat functions of two grids, restricted to dofs."""
        kind = self.selector
        if kind == "V" and not dirichlet:
            kind = "H1"
        c = gramian_between(grid_a.nodes, grid_b.nodes, kind)
        return c[1:-1, 1:-1] if dirichlet else c


def _as_space(space):
    if isinstance(space, InnerProductSpec):
        return space
    return InnerProductSpec(space)


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Rank-``ell`` POD basis.

    Attributes
    ----------
    modes : (m, ell) ndarray
        FE coefficients of the modes on ``grid``.
    eigenvalues : (ell,) ndarray
        Leading eigenvalues, nonincreasing and positive.
    eigvecs_k : (n, ell) ndarray or None
        Eigenvectors of the correlation matrix linked to the modes by
        ``psi_i = Y D^(1/2) phi_i / sqrt(lambda_i)``.
    spectrum : ndarray
        Every eigenvalue estimate the solver produced (untruncated, may
        contain round-off noise below the rank cutoff).
    total_energy : float
        Sum of the eigenvalues up to the numerical rank.
    snapshot_energy : float
        ``sum_j alpha_j ||y_j||_X^2`` computed from the snapshots directly.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    eigvecs_k: np.ndarray | None
    spectrum: np.ndarray
    total_energy: float
    snapshot_energy: float
    rank: int
    space: InnerProductSpec
    method: str
    grid: Grid1D

    @property
    def ell(self):
        return self.modes.shape[1]

    @property
    def singular_values(self):
        return np.sqrt(self.eigenvalues)

    @property
    def dirichlet(self):
        return self.grid.is_dirichlet_layout(self.modes)

    def weight_matrix(self):
        return self.space.weight_matrix(self.grid, self.dirichlet)

    def truncate(self, ell):
        if not 0 <= ell <= self.ell:
            raise InvalidArgumentError(f"cannot truncate a rank-{self.ell} basis to {ell}")
        return replace(
            self,
            modes=self.modes[:, :ell],
            eigenvalues=self.eigenvalues[:ell],
            eigvecs_k=None if self.eigvecs_k is None else self.eigvecs_k[:, :ell],
        )


@dataclass(frozen=True, eq=False)
class CrossGramian:
    """Symmetric matrix ``K_ij = sqrt(alpha_i alpha_j) <y_i, y_j>_X`` and its numerical rank."""

    matrix: np.ndarray
    rank: int


# -- helpers -------------------------------------------------------------------------------


def _numerical_rank(values, size, singular):
    """Count of values above ``size * eps`` times the largest (for singular values or eigenvalues)."""
    if values.size == 0 or values[0] <= 0.0:
        return 0
    return int(np.count_nonzero(values > size * EPS * values[0]))


def _fix_signs(modes, *others):
    """Make the first entry of largest magnitude of each mode positive."""
    idx = np.argmax(np.abs(modes), axis=0)
    sgn = np.sign(modes[idx, np.arange(modes.shape[1])])
    sgn[sgn == 0] = 1.0
    out = [modes * sgn]
    for o in others:
        out.append(None if o is None else o * sgn)
    return out


def _check_finite(snapshots):
    for c in snapshots.coefficients:
        if not np.all(np.isfinite(c)):
            raise InvalidArgumentError("snapshot data contains nonfinite values")


def snapshot_energy(snapshots, space=None):
    """``sum_j alpha_j ||y_j||_X^2`` for homogeneous or mixed-grid sets."""
    space = _as_space(space or snapshots.inner_product)
    if snapshots.homogeneous:
        y = snapshots.matrix()
        w = space.weight_matrix(snapshots.grid, snapshots.dirichlet)
        return float(np.sum(snapshots.weights * np.einsum("ij,ij->j", y, w @ y)))
    total = 0.0
    for g, c, a in zip(snapshots.grids, snapshots.coefficients, snapshots.weights):
        w = space.weight_matrix(g, g.is_dirichlet_layout(c))
        total += a * float(c @ (w @ c))
    return total


def _require_rank(ell, rank):
    if ell is None:
        ell = rank
    if int(ell) != ell or ell < 1:
        raise InvalidArgumentError(f"number of modes must be a positive integer, got {ell}")
    if ell > rank:
        raise RankDeficientError(f"requested {ell} modes but the numerical rank is {rank}", rank=rank)
    return int(ell)


# -- single-grid routes ------------------------------------------------------------------------


def weighted_pod(y, w, weights, ell=None, flag="svd", kernel="lapack"):
    """Matrix-level POD of ``Y`` for the weight matrix ``W`` and time weights ``D``.

    Parameters
    ----------
    y : (m, n) array_like
        Snapshot coefficients, one column per snapshot.
    w : (m, m) array_like or sparse matrix
        Symmetric positive definite weight matrix.
    weights : (n,) array_like
        Positive snapshot weights (the diagonal of ``D``).
    ell : int, optional
        Number of modes, defaults to the numerical rank.

    Returns
    -------
    modes, eigenvalues, eigvecs, spectrum, rank
        ``modes`` are ``W``-orthonormal with the sign convention applied;
        ``spectrum`` holds every eigenvalue estimate of the chosen route.
    """
    if flag not in FLAGS:
        raise InvalidArgumentError(f"unknown POD flag {flag!r}, expected one of {FLAGS}")
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or not np.all(np.isfinite(y)):
        raise InvalidArgumentError("snapshot matrix must be a finite 2D array")
    m, n = y.shape
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,) or np.any(weights <= 0):
        raise InvalidArgumentError("need one positive weight per snapshot")
    if w.shape != (m, m):
        raise InvalidArgumentError(f"weight matrix of shape {w.shape} does not fit {m} dofs")
    sqrt_d = np.sqrt(weights)
    size = max(m, n)

    if flag == "eig_yty":
        kmat = sqrt_d[:, None] * (y.T @ (w @ y)) * sqrt_d[None, :]
        lam, phi = sym_eig(0.5 * (kmat + kmat.T), kernel)
        rank = _numerical_rank(lam, size, singular=False)
        ell = _require_rank(ell, rank)
        lam_l = lam[:ell]
        phi_l = phi[:, :ell]
        modes = (y * sqrt_d) @ phi_l / np.sqrt(lam_l)
    else:
        w_half, w_inv_half = spd_sqrt(w, kernel)
        ybar = w_half @ (y * sqrt_d)
        if flag == "svd":
            u, s, vt = sla.svd(ybar, full_matrices=False, lapack_driver="gesvd")
            rank = _numerical_rank(s, size, singular=True)
            ell = _require_rank(ell, rank)
            lam = s**2
            modes = w_inv_half @ u[:, :ell]
            phi_l = vt[:ell].T
        else:
            lam, u = sym_eig(ybar @ ybar.T, kernel)
            rank = _numerical_rank(lam, size, singular=False)
            ell = _require_rank(ell, rank)
            modes = w_inv_half @ u[:, :ell]
            phi_l = ybar.T @ u[:, :ell] / np.sqrt(lam[:ell])
        lam_l = lam[:ell]
    modes, phi_l = _fix_signs(modes, phi_l)
    return modes, lam_l.copy(), phi_l, lam.copy(), rank


def compute_pod_basis(snapshots, space=None, ell=None, flag="svd", kernel="lapack"):
    """POD basis of rank ``ell`` from a snapshot set.

    Parameters
    ----------
    snapshots : SnapshotSet
        Homogeneous for ``svd`` and ``eig_yyt``; ``eig_yty`` also accepts
        snapshots on different grids.
    space : InnerProductSpec or str, optional
        Defaults to the inner product recorded on the snapshot set.
    ell : int, optional
        Number of modes; defaults to the numerical rank.
    flag : {"svd", "eig_yyt", "eig_yty"}
    kernel : {"lapack", "jacobi"}
        Symmetric eigen solver used by the eigen routes and for ``W^(1/2)``.
    """
    if flag not in FLAGS:
        raise InvalidArgumentError(f"unknown POD flag {flag!r}, expected one of {FLAGS}")
    space = _as_space(space or snapshots.inner_product)
    _check_finite(snapshots)
    if not snapshots.homogeneous:
        if flag != "eig_yty":
            raise UnsupportedOperationError(f"flag {flag!r} needs snapshots on a single grid")
        return pod_from_gramian(cross_gramian(snapshots, space), snapshots, ell, kernel=kernel)

    grid = snapshots.grid
    w = space.weight_matrix(grid, snapshots.dirichlet)
    modes, lam_l, phi_l, spectrum, rank = weighted_pod(snapshots.matrix(), w, snapshots.weights, ell, flag, kernel)
    energy = snapshot_energy(snapshots, space)
    return PodBasis(
        modes=modes,
        eigenvalues=lam_l.copy(),
        eigvecs_k=phi_l,
        spectrum=spectrum.copy(),
        total_energy=float(np.sum(spectrum[:rank])),
        snapshot_energy=energy,
        rank=rank,
        space=space,
        method=flag,
        grid=grid,
    )


# -- cross-mesh route ----------------------------------------------------------------------


def _grid_groups(snapshots):
    groups = []  # (grid, [indices])
    for i, g in enumerate(snapshots.grids):
        for rep, members in groups:
            if g is rep or g.same_as(rep):
                members.append(i)
                break
        else:
            groups.append((g, [i]))
    return groups


def cross_gramian(snapshots, space=None, workers=1):
    """Correlation matrix of snapshots that may live on different grids.

    Each entry is integrated exactly on the merged node set of the two grids
    involved. Blocks of grid pairs are independent and can be evaluated by
    ``workers`` threads.
    """
    space = _as_space(space or snapshots.inner_product)
    _check_finite(snapshots)
    a0, b0 = snapshots.grids[0].interval
    for g in snapshots.grids:
        a, b = g.interval
        if not (np.isclose(a, a0) and np.isclose(b, b0)):
            raise InvalidArgumentError("snapshot grids cover different intervals")
    groups = _grid_groups(snapshots)
    n = len(snapshots)
    sqrt_d = np.sqrt(snapshots.weights)
    blocks = []
    for ga in range(len(groups)):
        for gb in range(ga, len(groups)):
            blocks.append((ga, gb))

    def coeff_block(members):
        return np.column_stack([snapshots.coefficients[i] for i in members])

    mats = [coeff_block(members) for _, members in groups]
    layouts = [groups[k][0].is_dirichlet_layout(mats[k]) for k in range(len(groups))]
    if len(set(layouts)) != 1:
        raise InvalidArgumentError("snapshots mix Dirichlet and Robin coefficient layouts")
    dirichlet = layouts[0]

    def compute(pair):
        ga, gb = pair
        grid_a, grid_b = groups[ga][0], groups[gb][0]
        if ga == gb:
            w = space.weight_matrix(grid_a, dirichlet)
        else:
            w = space.between(grid_a, grid_b, dirichlet)
        return mats[ga].T @ (w @ mats[gb])

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(compute, blocks))
    else:
        results = [compute(p) for p in blocks]
    kmat = np.zeros((n, n))
    for (ga, gb), blk in zip(blocks, results):
        ia, ib = groups[ga][1], groups[gb][1]
        kmat[np.ix_(ia, ib)] = blk
        kmat[np.ix_(ib, ia)] = blk.T
    kmat = sqrt_d[:, None] * kmat * sqrt_d[None, :]
    kmat = 0.5 * (kmat + kmat.T)
    lam = np.linalg.eigvalsh(kmat)[::-1]
    return CrossGramian(matrix=kmat, rank=_numerical_rank(lam, n, singular=False))


def common_grid(snapshots):
    """Union of all snapshot grids (the common finest grid)."""
    groups = _grid_groups(snapshots)
    if len(groups) == 1:
        return groups[0][0]
    return Grid1D(merge_nodes(*[g.nodes for g, _ in groups]))


def pod_from_gramian(gram, snapshots, ell=None, kernel="lapack"):
    """POD basis from a correlation matrix; modes live on the common finest grid."""
    if gram.matrix.shape != (len(snapshots),) * 2:
        raise InvalidArgumentError("Gramian size does not match the snapshot set")
    lam, phi = sym_eig(gram.matrix, kernel)
    n = len(snapshots)
    rank = _numerical_rank(lam, n, singular=False)
    ell = _require_rank(ell, rank)
    lam_l, phi_l = lam[:ell], phi[:, :ell]
    grid = common_grid(snapshots)
    dirichlet = snapshots.grids[0].is_dirichlet_layout(snapshots.coefficients[0])
    if snapshots.homogeneous:
        vals = snapshots.matrix()
    else:
        vals = snapshots.values_on(grid.nodes)
        if dirichlet:
            vals = vals[1:-1]
    modes = (vals * np.sqrt(snapshots.weights)) @ phi_l / np.sqrt(lam_l)
    modes, phi_l = _fix_signs(modes, phi_l)
    space = _as_space(snapshots.inner_product)
    return PodBasis(
        modes=modes,
        eigenvalues=lam_l.copy(),
        eigvecs_k=phi_l,
        spectrum=lam.copy(),
        total_energy=float(np.sum(lam[:rank])),
        snapshot_energy=float(np.trace(gram.matrix)),
        rank=rank,
        space=space,
        method="eig_yty",
        grid=grid,
    )


# -- energy and projection -------------------------------------------------------------------


def energy_fraction(basis_or_spectrum, ell, total=None):
    """Share ``sum_{i<=ell} lambda_i / sum_j alpha_j ||y_j||^2`` of captured energy.

    For a :class:`PodBasis` the denominator comes from the snapshot norms;
    for a bare spectrum pass ``total`` or the full spectrum is summed.
    """
    if isinstance(basis_or_spectrum, PodBasis):
        lam = basis_or_spectrum.spectrum[: basis_or_spectrum.rank]
        denom = basis_or_spectrum.snapshot_energy if total is None else total
    else:
        lam = np.asarray(basis_or_spectrum, dtype=float)
        denom = float(np.sum(lam)) if total is None else total
    if ell > lam.size:
        raise InvalidArgumentError(f"only {lam.size} eigenvalues available, asked for {ell}")
    if denom <= 0:
        return 0.0
    return float(min(max(np.sum(lam[:ell]) / denom, 0.0), 1.0))


def select_rank(basis_or_spectrum, loss, total=None):
    """Smallest ``ell`` with energy fraction strictly above ``1 - loss``."""
    lam = basis_or_spectrum.spectrum[: basis_or_spectrum.rank] if isinstance(basis_or_spectrum, PodBasis) else np.asarray(basis_or_spectrum)
    for ell in range(1, lam.size + 1):
        if energy_fraction(basis_or_spectrum, ell, total) > 1.0 - loss:
            return ell
    return int(lam.size)


def project(v, basis):
    """Fourier coefficients ``<v, psi_i>_X`` and the reconstruction ``sum_i c_i psi_i``.

    ``v`` is a coefficient vector or matrix (columns) on the basis grid, or a
    :class:`SnapshotSet` whose snapshots are carried to the basis grid first.
    """
    if hasattr(v, "coefficients"):
        if v.homogeneous and v.grid.same_as(basis.grid):
            arr = v.matrix()
        else:
            arr = v.values_on(basis.grid.nodes)
            if basis.dirichlet:
                arr = arr[1:-1]
    else:
        arr = np.asarray(v, dtype=float)
    if arr.shape[0] != basis.modes.shape[0]:
        raise InvalidArgumentError(
            f"vector length {arr.shape[0]} does not match basis dimension {basis.modes.shape[0]}"
        )
    w = basis.weight_matrix()
    coeffs = basis.modes.T @ (w @ arr)
    return coeffs, basis.modes @ coeffs


# -- export ---------------------------------------------------------------------------------


def save_basis(basis, path):
    meta = [
        ("format", "podrom-basis-v1"),
        ("inner_product", basis.space.selector),
        ("method", basis.method),
        ("rank", basis.rank),
        ("eigenvalues", list(basis.eigenvalues)),
        ("nodes", list(basis.grid.nodes)),
    ]
    cols = ["dof"] + [f"psi_{i + 1}" for i in range(basis.ell)]
    rows = ([i] + list(row) for i, row in enumerate(basis.modes))
    return tio.write_table(path, meta, cols, rows)


def load_basis(path):
    meta, _, rows = tio.read_table(path)
    if tio.meta_lookup(meta, "format")[0] != "podrom-basis-v1":
        raise InvalidArgumentError(f"{path} is not a basis file")
    lam = np.array([float(x) for x in tio.meta_lookup(meta, "eigenvalues")])
    grid = Grid1D(np.array([float(x) for x in tio.meta_lookup(meta, "nodes")]))
    modes = np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), lam.size)
    return PodBasis(
        modes=modes,
        eigenvalues=lam,
        eigvecs_k=None,
        spectrum=lam.copy(),
        total_energy=float(lam.sum()),
        snapshot_energy=float(lam.sum()),
        rank=int(tio.meta_lookup(meta, "rank")[0]),
        space=InnerProductSpec(tio.meta_lookup(meta, "inner_product")[0]),
        method=tio.meta_lookup(meta, "method")[0],
        grid=grid,
    )


def save_spectrum(basis_or_spectrum, path, total=None, method=None):
    """Rows ``(i, lambda_i, sigma_i, E(i))`` for the computed spectrum."""
    if isinstance(basis_or_spectrum, PodBasis):
        lam = basis_or_spectrum.spectrum
        denom = basis_or_spectrum.snapshot_energy if total is None else total
        method = method or basis_or_spectrum.method
    else:
        lam = np.asarray(basis_or_spectrum, dtype=float)
        denom = float(np.sum(np.clip(lam, 0, None))) if total is None else total
    lam_pos = np.clip(lam, 0.0, None)
    cum = np.cumsum(lam_pos) / denom if denom > 0 else np.zeros_like(lam_pos)
    rows = ([i + 1, lam[i], np.sqrt(lam_pos[i]), min(cum[i], 1.0)] for i in range(lam.size))
    meta = [("format", "podrom-spectrum-v1"), ("method", method or "unknown")]
    return tio.write_table(path, meta, ["i", "lambda", "sigma", "energy"], rows)
