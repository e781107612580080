import numpy as np
import pytest

from podrom.errors import InvalidArgumentError
from podrom.problems import PROBLEMS, convection_gv2, heat_gv1, make_problem, perturbed_grid


def test_heat_data():
    p = heat_gv1()
    assert p.domain == (0.0, 2.0) and p.horizon == 3.0
    np.testing.assert_allclose(p.forcing(1.0, np.array([0.0, 1.0])), [1.0, 0.0])
    np.testing.assert_allclose(p.initial(np.array([0.25, 0.75, 1.25, 1.75])), [0, 1, -1, 0])


def test_convection_coefficients_and_cap():
    p = convection_gv2()
    assert (p.diffusivity, p.velocity, p.reaction) == (0.025, 1.0, -0.001)
    assert p.forcing(1.0, np.array([0.0]))[0] == pytest.approx(100.0)
    assert p.forcing(0.0, np.array([0.0]))[0] == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        convection_gv2(cap=0)


def test_catalog():
    for name in PROBLEMS:
        assert make_problem(name).name == name
    with pytest.raises(InvalidArgumentError):
        make_problem("missing")
    with pytest.raises(InvalidArgumentError):
        make_problem("heat-gv1", bogus=1)


def test_perturbed_grid_order():
    g = perturbed_grid(0, 1, 50, 0.99, np.random.default_rng(0))
    assert np.all(np.diff(g.nodes) > 0) and g.interval == (0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        perturbed_grid(0, 1, 5, 1.0, np.random.default_rng(0))
