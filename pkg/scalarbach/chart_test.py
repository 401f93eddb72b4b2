import math

import numpy as np
import pytest

from scalarbach.chart import Domain, GridSpec, integrate, make_chart, periodic_derivative
from scalarbach.config import Topology
from scalarbach.utils import InvalidSpecError, NonPeriodicGridError, PointOutsideChartError


def test_box_grid_weights_sum_to_volume(small_box):
    assert small_box.size == 256
    assert small_box.shape == (4, 4, 4, 4)
    assert np.sum(small_box.volume_weights) == pytest.approx((2 * math.pi) ** 4)


def test_polar_ball_volume_and_second_moment(flat_ball):
    r = 0.5
    grid = make_chart(
        GridSpec(topology=Topology.POLAR_BALL, extents=[r], resolution=[4, 4, 4, 4], radial_breaks=[0.6, 0.92])
    )
    assert grid.size == 12 * 4 * 4 * 4
    assert np.all(grid.radii < r)
    volume = integrate(1.0, grid, flat_ball)
    assert volume == pytest.approx(math.pi ** 2 * r ** 4 / 2, rel=1e-12)
    moment = integrate(grid.nodes[:, 0] ** 2, grid, flat_ball)
    assert moment == pytest.approx(math.pi ** 2 * r ** 6 / 12, rel=1e-12)


def test_polar_ball_is_centered():
    grid = make_chart(GridSpec(topology=Topology.POLAR_BALL, extents=[1.0], resolution=[4, 4, 4, 4], center=[1, 2, 3, 4]))
    distances = np.linalg.norm(grid.nodes - np.array([1.0, 2.0, 3.0, 4.0]), axis=1)
    np.testing.assert_allclose(distances, grid.radii, atol=1e-12)


def test_periodic_derivative_of_sine():
    grid = make_chart(GridSpec(resolution=[8, 4, 4, 4]))
    values = np.sin(grid.nodes[:, 0]).reshape(grid.shape)
    np.testing.assert_allclose(periodic_derivative(values, grid, (1, 0, 0, 0)).reshape(-1), np.cos(grid.nodes[:, 0]), atol=1e-12)
    np.testing.assert_allclose(periodic_derivative(values, grid, (2, 0, 0, 0)).reshape(-1), -np.sin(grid.nodes[:, 0]), atol=1e-12)


def test_periodic_derivative_needs_box():
    grid = make_chart(GridSpec(topology=Topology.POLAR_BALL, extents=[1.0], resolution=[4, 4, 4, 4]))
    with pytest.raises(NonPeriodicGridError):
        periodic_derivative(np.zeros(grid.size), grid, (1, 0, 0, 0))


def test_domain_wraps_periodic_points():
    domain = Domain.box(2 * math.pi)
    located = domain.locate(np.array([[2 * math.pi + 0.5, -0.5, 0.0, 1.0]]))
    np.testing.assert_allclose(located[0], [0.5, 2 * math.pi - 0.5, 0.0, 1.0])


def test_domain_rejects_points_outside_ball_chart():
    with pytest.raises(PointOutsideChartError):
        Domain.centered(1.0).locate(np.array([2.0, 0.0, 0.0, 0.0]))


def test_make_chart_rejects_coarse_resolution():
    with pytest.raises(InvalidSpecError):
        make_chart(GridSpec(resolution=[3, 4, 4, 4]))
    with pytest.raises(InvalidSpecError):
        make_chart({"topology": "polar-ball", "extents": [1.0], "resolution": [4, 4, 4, 4], "radial_breaks": [1.5]})


def test_integrate_is_deterministic(small_box, euclidean):
    values = np.sin(small_box.nodes[:, 0]) + 1e-3 * np.cos(small_box.nodes[:, 1])
    assert integrate(values, small_box, euclidean) == integrate(values, small_box, euclidean)
