"""Proper orthogonal decomposition and reduced-order models for 1D parabolic problems."""

from .errors import (
    ConvergenceError,
    IllPosedRomError,
    InvalidArgumentError,
    RankDeficientError,
    RomFailure,
    UnsupportedOperationError,
)
from .mesh import Grid1D, ModelProblem, RobinBoundary, build_grid
from .snapshots import SnapshotSet, TimeGrid, append_difference_quotients, state_solve, state_solve_on_grids
from .pod import PodBasis, compute_pod_basis, cross_gramian, energy_fraction, pod_from_gramian, select_rank
from .rom import assemble_rom, lift, rom_step_sequence
from .analytics import ErrorReport, proj_error_curve, rom_error_curve
from .optimizer import PlacementSetup, optimize_placement
from .problems import make_problem

__version__ = "0.1.0"
