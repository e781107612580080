"""Error curves, spectra and report files."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as tio
from .errors import ConvergenceError, IllPosedRomError, InvalidArgumentError, RomFailure
from .mesh import Grid1D, interpolation_matrix, merge_nodes
from .pod import InnerProductSpec, compute_pod_basis, energy_fraction
from .rom import assemble_rom, full_load_matrix, lift, rom_step_sequence

__all__ = [
    "ErrorReport",
    "Stopwatch",
    "proj_error_curve",
    "rom_error_curve",
    "reference_error_curve",
    "emit_report",
]


class Stopwatch:
    """Accumulates wall-clock seconds per label."""

    def __init__(self):
        self.records = {}

    def __call__(self, label):
        watch = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                watch.records[label] = watch.records.get(label, 0.0) + time.perf_counter() - self.t0
                return False

        return _Ctx()


@dataclass(eq=False)
class ErrorReport:
    """Error curves over basis sizes ``ells`` and the spectrum of the basis.

    ``proj_error`` is the projection error of the whole snapshot set (its
    square equals the eigenvalue tail); ``proj_error_trajectory`` restricts
    the sum to the trajectory ensemble, which is the quantity comparable with
    ``rom_error``.
    """

    ells: np.ndarray
    proj_error: np.ndarray
    proj_error_trajectory: np.ndarray
    rom_error: np.ndarray
    spectrum: np.ndarray
    energy: np.ndarray
    norms_used: str = "H"
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def singular_values(self):
        return np.sqrt(np.clip(self.spectrum, 0.0, None))

    @property
    def speedup(self):
        fe, rom = self.timings.get("fe_solve"), self.timings.get("rom_solve")
        if fe and rom:
            return fe / rom
        return None


# -- helpers -----------------------------------------------------------------------------


def _on_basis_grid(snapshots, basis):
    """Snapshot coefficients on the basis grid (exact when that grid refines theirs)."""
    if snapshots.homogeneous and snapshots.grid.same_as(basis.grid):
        return snapshots.matrix()
    vals = snapshots.values_on(basis.grid.nodes)
    return vals[1:-1] if basis.dirichlet else vals


def _weighted_norms_sq(diff, w, alpha):
    return float(np.sum(alpha * np.einsum("ij,ij->j", diff, w @ diff)))


def proj_error_curve(snapshots, basis, ell_max=None, trajectory_only=False):
    """Weighted projection errors for ``ell = 0 .. ell_max``.

    Residuals are formed by successive orthogonalization against the modes,
    one mode at a time, so small errors do not suffer from cancellation.
    With ``trajectory_only`` the sum runs over the first ensemble only.
    """
    ell_max = basis.ell if ell_max is None else int(ell_max)
    if ell_max > basis.ell or ell_max < 0:
        raise InvalidArgumentError(f"ell_max {ell_max} outside 0..{basis.ell}")
    if trajectory_only:
        snapshots = snapshots.subset(snapshots.trajectory_indices())
    r = np.array(_on_basis_grid(snapshots, basis), dtype=float)
    w = basis.weight_matrix()
    alpha = snapshots.weights
    out = np.empty(ell_max + 1)
    out[0] = _weighted_norms_sq(r, w, alpha)
    for i in range(ell_max):
        psi = basis.modes[:, i]
        r -= np.outer(psi, psi @ (w @ r))
        out[i + 1] = _weighted_norms_sq(r, w, alpha)
    return np.sqrt(np.clip(out, 0.0, None))


def _norm_spec(norm, space):
    if norm is None:
        return space
    return norm if isinstance(norm, InnerProductSpec) else InnerProductSpec(norm)


def rom_error_curve(
    snapshots,
    problem,
    space,
    ells,
    treatment="none",
    basis=None,
    flag="svd",
    norm=None,
    load_mode="endpoint",
    on_failure="raise",
    newton_tol=1e-10,
    return_failures=False,
):
    """Discrete trajectory errors ``(sum_j alpha_j ||y_j - y^ell(t_j)||^2)^(1/2)``.

    Parameters
    ----------
    snapshots : SnapshotSet
        Basis data; its first ensemble is the full-order trajectory the ROM
        is compared with.
    space : InnerProductSpec or str
        Inner product of the POD basis.
    ells : sequence of int
        Basis sizes; ``0`` yields the trajectory norm.
    basis : PodBasis, optional
        Precomputed basis of at least ``max(ells)`` modes.
    norm : str, optional
        Error norm, defaults to ``space`` (a different choice gives e.g. the
        V-norm error of an H-built basis).
    load_mode : {"endpoint", "average"}
        Endpoint loads reproduce the full-order scheme exactly in span.
    on_failure : {"raise", "record"}
        ``record`` stores NaN and the failure instead of raising
        :class:`RomFailure`.
    """
    space = space if isinstance(space, InnerProductSpec) else InnerProductSpec(space)
    norm = _norm_spec(norm, space)
    ells = [int(e) for e in ells]
    if on_failure not in ("raise", "record"):
        raise InvalidArgumentError("on_failure must be 'raise' or 'record'")
    traj = snapshots.subset(snapshots.trajectory_indices())
    if traj.time_grid is None or len(traj.time_grid) != len(traj):
        raise InvalidArgumentError("trajectory entries must match the snapshot time grid")
    need = max([e for e in ells if e > 0], default=0)
    if basis is None and need > 0:
        basis = compute_pod_basis(snapshots, space, need, flag=flag)
    errors = np.full(len(ells), np.nan)
    failures = []
    if basis is not None:
        ref = _on_basis_grid(traj, basis)
        w = norm.weight_matrix(basis.grid, basis.dirichlet)
        loads = full_load_matrix(basis.grid, problem, traj.time_grid, load_mode)
    else:
        ref = traj.matrix()
        w = norm.weight_matrix(traj.grid, traj.dirichlet)
    alpha = traj.weights
    for k, ell in enumerate(ells):
        if ell == 0:
            errors[k] = np.sqrt(_weighted_norms_sq(ref, w, alpha))
            continue
        try:
            if ell > basis.ell:
                raise InvalidArgumentError(f"basis has only {basis.ell} modes")
            bl = basis.truncate(ell)
            system = assemble_rom(
                bl, snapshots, problem, treatment, traj.time_grid, load_mode, newton_tol, full_loads=loads
            )
            eta = rom_step_sequence(system).eta
            errors[k] = np.sqrt(_weighted_norms_sq(ref - bl.modes @ eta, w, alpha))
        except (IllPosedRomError, ConvergenceError, InvalidArgumentError, np.linalg.LinAlgError) as exc:
            if on_failure == "raise":
                raise RomFailure(f"reduced model with {ell} modes failed: {exc}", ell=ell, cause=exc) from exc
            failures.append((ell, type(exc).__name__, str(exc)))
    if return_failures:
        return errors, failures
    return errors


def _time_interpolate(reference, instants):
    """Linear interpolation in time of a homogeneous trajectory; returns nodal values."""
    ref = reference.subset(reference.trajectory_indices())
    vals = ref.grid.nodal_values(ref.matrix()) if ref.homogeneous else ref.values_on(ref.grids[0].nodes)
    t = ref.times
    if instants[0] < t[0] - 1e-12 or instants[-1] > t[-1] + 1e-12:
        raise InvalidArgumentError("reference does not cover the requested time span")
    idx = np.clip(np.searchsorted(t, instants, side="right") - 1, 0, t.size - 2)
    theta = np.clip((instants - t[idx]) / (t[idx + 1] - t[idx]), 0.0, 1.0)
    return vals[:, idx] * (1.0 - theta) + vals[:, idx + 1] * theta, ref.grids[0]


def reference_error_curve(
    snapshots,
    fine_reference,
    basis,
    ells,
    problem,
    norm="H",
    treatment="none",
    load_mode="endpoint",
):
    """ROM errors against a reference trajectory instead of the snapshots.

    The reference is interpolated linearly in time onto the snapshot
    instants; the ROM solution and the reference are compared on the union
    of their spatial grids, so the norms are exact.
    """
    norm = _norm_spec(norm, basis.space)
    traj = snapshots.subset(snapshots.trajectory_indices())
    tgrid = traj.time_grid
    ref_vals, ref_grid = _time_interpolate(fine_reference, tgrid.instants)
    union = Grid1D(merge_nodes(ref_grid.nodes, basis.grid.nodes))
    ref_u = interpolation_matrix(ref_grid.nodes, union.nodes) @ ref_vals
    dirichlet = basis.dirichlet
    if dirichlet:
        ref_u = ref_u[1:-1]
    w = norm.weight_matrix(union, dirichlet)
    alpha = traj.weights
    loads = full_load_matrix(basis.grid, problem, tgrid, load_mode)
    out = np.empty(len(ells))
    for k, ell in enumerate(ells):
        if ell == 0:
            out[k] = np.sqrt(_weighted_norms_sq(ref_u, w, alpha))
            continue
        bl = basis.truncate(int(ell))
        system = assemble_rom(bl, snapshots, problem, treatment, tgrid, load_mode, full_loads=loads)
        rom = lift(rom_step_sequence(system), bl, union).matrix()
        out[k] = np.sqrt(_weighted_norms_sq(ref_u - rom, w, alpha))
    return out


def build_report(snapshots, basis, problem, ells, treatment="none", norm=None, timings=None, **kwargs):
    """Convenience assembly of an :class:`ErrorReport` for one basis."""
    ells = np.asarray(list(ells), dtype=int)
    ell_max = int(ells.max()) if ells.size else 0
    proj = proj_error_curve(snapshots, basis, ell_max)
    proj_t = proj_error_curve(snapshots, basis, ell_max, trajectory_only=True)
    watch = Stopwatch()
    with watch("rom_solve"):
        rom, failures = rom_error_curve(
            snapshots,
            problem,
            basis.space,
            ells,
            treatment,
            basis=basis,
            norm=norm,
            on_failure="record",
            return_failures=True,
            **kwargs,
        )
    rank = basis.rank
    energy = np.array([energy_fraction(basis, min(int(e), rank)) for e in ells])
    t = dict(timings or {})
    t.update(watch.records)
    return ErrorReport(
        ells=ells,
        proj_error=proj[ells],
        proj_error_trajectory=proj_t[ells],
        rom_error=rom,
        spectrum=basis.spectrum.copy(),
        energy=energy,
        norms_used=(norm or basis.space.selector) if isinstance(norm, (str, type(None))) else norm.selector,
        timings=t,
        failures=failures,
    )


def emit_report(report, destination):
    """Write ``errors.csv``, ``spectrum.csv``, ``summary.txt`` and ``timings.json``.

    The CSV files and the summary depend only on the numbers in the report;
    wall-clock timings go to the JSON file so that repeated runs produce
    byte-identical tables.
    """
    dest = Path(destination)
    try:
        tio.ensure_dir(dest)
    except OSError as exc:
        raise OSError(f"cannot create report directory {dest}: {exc}") from exc
    extra_names = sorted(report.extra)
    cols = ["ell", "proj_error", "proj_error_trajectory", "rom_error", "energy"] + extra_names
    rows = []
    for k, ell in enumerate(report.ells):
        row = [
            int(ell),
            report.proj_error[k],
            report.proj_error_trajectory[k],
            report.rom_error[k],
            report.energy[k],
        ]
        row += [report.extra[name][k] for name in extra_names]
        rows.append(row)
    meta = [("format", "podrom-errors-v1"), ("norm", report.norms_used)]
    paths = [tio.write_table(dest / "errors.csv", meta, cols, rows)]
    lam = report.spectrum
    pos = np.clip(lam, 0.0, None)
    total = pos.sum()
    cum = np.minimum(np.cumsum(pos) / total, 1.0) if total > 0 else np.zeros_like(pos)
    spec_rows = ([i + 1, lam[i], np.sqrt(pos[i]), cum[i]] for i in range(lam.size))
    paths.append(
        tio.write_table(
            dest / "spectrum.csv", [("format", "podrom-spectrum-v1")], ["i", "lambda", "sigma", "energy"], spec_rows
        )
    )
    lines = [f"norm: {report.norms_used}", f"basis sizes: {len(report.ells)}"]
    if lam.size:
        lines.append(f"lambda_1: {tio.fmt(lam[0])}")
    for k, ell in enumerate(report.ells):
        lines.append(
            f"ell={int(ell)} proj={report.proj_error_trajectory[k]:.6e} rom={report.rom_error[k]:.6e}"
        )
    for ell, kind, msg in report.failures:
        lines.append(f"failure ell={ell} {kind}: {msg}")
    lines.extend(f"note: {n}" for n in report.notes)
    summary = dest / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    paths.append(summary)
    timings = dict(report.timings)
    if report.speedup is not None:
        timings["speedup"] = report.speedup
    tpath = dest / "timings.json"
    tpath.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    paths.append(tpath)
    return paths
