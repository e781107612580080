"""Catalog of model problems used by the presets and the test suite."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .mesh import Grid1D, ModelProblem, RobinBoundary, build_grid

__all__ = [
    "heat_gv1",
    "convection_gv2",
    "cubic_heat",
    "moving_source",
    "near_equilibrium",
    "robin_heat",
    "perturbed_grid",
    "make_problem",
    "PROBLEMS",
]


def _step_initial(x):
    x = np.asarray(x, dtype=float)
    return ((x > 0.5) & (x < 1.0)).astype(float) - ((x > 1.0) & (x < 1.5)).astype(float)


def _gv1_forcing(t, x):
    return t**3 - np.asarray(x, dtype=float) ** 2


def heat_gv1(horizon=3.0):
    """Heat equation on (0, 2): source ``t^3 - x^2``, step initial value, Dirichlet ends."""
    return ModelProblem(
        kind="linear_heat",
        forcing=_gv1_forcing,
        initial=_step_initial,
        initial_breakpoints=(0.5, 1.0, 1.5),
        domain=(0.0, 2.0),
        horizon=horizon,
        name="heat-gv1",
    )


def convection_gv2(cap=100.0, diffusivity=0.025, velocity=1.0, reaction=-0.001, horizon=3.0):
    """Convection-dominated variant with source ``P(1/(1-t)) cos(pi x)``.

    ``P`` clips to ``[-cap, cap]``; for large caps the solution develops a
    jump at ``t = 1``.
    """
    if not cap > 0:
        raise InvalidArgumentError("cap must be positive")

    def forcing(t, x):
        amp = cap if t == 1.0 else float(np.clip(1.0 / (1.0 - t), -cap, cap))
        return amp * np.cos(np.pi * np.asarray(x, dtype=float))

    return ModelProblem(
        kind="convection_reaction_diffusion",
        diffusivity=diffusivity,
        velocity=velocity,
        reaction=reaction,
        forcing=forcing,
        initial=_step_initial,
        initial_breakpoints=(0.5, 1.0, 1.5),
        domain=(0.0, 2.0),
        horizon=horizon,
        name="convection-gv2",
    )


def cubic_heat(cubic=1.0, horizon=3.0):
    """Semilinear heat equation with ``c3 y^3`` and the data of :func:`heat_gv1`."""
    return ModelProblem(
        kind="semilinear_cubic",
        cubic=cubic,
        forcing=_gv1_forcing,
        initial=_step_initial,
        initial_breakpoints=(0.5, 1.0, 1.5),
        domain=(0.0, 2.0),
        horizon=horizon,
        name="cubic-heat",
    )


def moving_source(diffusivity=0.02, amplitude=20.0, relax=0.15, width=0.08, horizon=1.0):
    """Heat on (0, 1) driven by a Gaussian source that drifts from 0.2 towards 0.8.

    The source position relaxes exponentially, so the state changes fast
    early on and settles later.
    """

    def forcing(t, x):
        centre = 0.2 + 0.6 * (1.0 - np.exp(-t / relax))
        return amplitude * np.exp(-(((np.asarray(x, dtype=float) - centre) / width) ** 2))

    return ModelProblem(
        kind="linear_heat",
        diffusivity=diffusivity,
        forcing=forcing,
        domain=(0.0, 1.0),
        horizon=horizon,
        name="moving-source",
    )


def near_equilibrium(perturbation=0.01, horizon=1.0, diffusivity=0.1):
    """Unforced decay of ``sin(pi x)`` plus a small second harmonic."""

    def initial(x):
        x = np.asarray(x, dtype=float)
        return np.sin(np.pi * x) + perturbation * np.sin(2 * np.pi * x)

    return ModelProblem(
        kind="linear_heat",
        diffusivity=diffusivity,
        initial=initial,
        domain=(0.0, 1.0),
        horizon=horizon,
        name="near-equilibrium",
    )


def robin_heat(q=1.0, g_left=0.0, g_right=1.0, diffusivity=1.0, horizon=1.0):
    """Heat on (0, 1) with ``c y_n + q y = g`` at both ends and a smooth source."""

    def forcing(t, x):
        return np.sin(np.pi * np.asarray(x, dtype=float)) * (1.0 + t)

    return ModelProblem(
        kind="linear_heat",
        diffusivity=diffusivity,
        forcing=forcing,
        initial=lambda x: np.cos(np.pi * np.asarray(x, dtype=float)),
        domain=(0.0, 1.0),
        horizon=horizon,
        boundary=RobinBoundary(q, g_left, q, g_right),
        name="robin-heat",
    )


def perturbed_grid(a, b, m, amount, rng):
    """Uniform grid with interior nodes shifted by ``amount * h * U(-1/2, 1/2)``.

    ``amount < 1`` keeps the node order.
    """
    if not 0.0 <= amount < 1.0:
        raise InvalidArgumentError("perturbation amount must lie in [0, 1)")
    base = build_grid(a, b, m)
    h = (b - a) / (m + 1)
    nodes = base.nodes.copy()
    nodes[1:-1] += amount * h * rng.uniform(-0.5, 0.5, m)
    return Grid1D(nodes)


PROBLEMS = {
    "heat-gv1": heat_gv1,
    "convection-gv2": convection_gv2,
    "cubic-heat": cubic_heat,
    "moving-source": moving_source,
    "near-equilibrium": near_equilibrium,
    "robin-heat": robin_heat,
}


def make_problem(name, **params):
    if name not in PROBLEMS:
        raise InvalidArgumentError(f"unknown problem {name!r}; available: {sorted(PROBLEMS)}")
    try:
        return PROBLEMS[name](**params)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for problem {name!r}: {exc}") from exc
