import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from podrom.mesh import build_grid
from podrom.problems import heat_gv1
from podrom.snapshots import TimeGrid, append_difference_quotients, state_solve

settings.register_profile(
    "podrom", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("podrom")


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1.0, cond, n)) @ q.T


def gauss_oracle(nodes, f, npts=3):
    """Element-wise Gauss quadrature of ``f(x)`` over a grid (independent of podrom)."""
    x, w = np.polynomial.legendre.leggauss(npts)
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        xq = 0.5 * (a + b) + 0.5 * (b - a) * x
        total += 0.5 * (b - a) * np.sum(w * f(xq))
    return total


@pytest.fixture(scope="session")
def gv1_desk():
    """Heat problem with the default desk discretization, trajectory and K = 2 set."""
    problem = heat_gv1()
    grid = build_grid(0.0, 2.0, 200)
    tgrid = TimeGrid.uniform(problem.horizon, 400)
    traj = state_solve(grid, problem, tgrid)
    return problem, grid, tgrid, traj, append_difference_quotients(traj)


@pytest.fixture(scope="session")
def gv1_small():
    problem = heat_gv1()
    grid = build_grid(0.0, 2.0, 60)
    tgrid = TimeGrid.uniform(problem.horizon, 80)
    traj = state_solve(grid, problem, tgrid)
    return problem, grid, tgrid, traj
