import math

import jax.numpy as jnp
import numpy as np
import pytest
from pydantic import ValidationError

from scalarbach.catalog import get_metric
from scalarbach.chart import GridSpec, integrate, make_chart
from scalarbach.config import get_config
from scalarbach.jets import ScalarField
from scalarbach.pipeline import (
    Ball,
    ConstructionParams,
    ball_count,
    ball_sites,
    bound_sampler,
    double_deformation,
    eta_field,
    evaluate_phi,
    psi_field,
    run_construction,
    select_k,
)
from scalarbach.profile import bump_profile
from scalarbach.utils import (
    AllCandidatesDegenerateError,
    InvalidSpecError,
    PhiNotNegativeError,
    PhiUnresolvedError,
    relative_residual,
)


CENTER = np.array([0.1, 0.2, -0.1, 0.3])
RADIUS = 0.5


@pytest.fixture
def profile():
    return bump_profile(0.3)


@pytest.fixture
def psi(profile):
    return psi_field(profile, Ball(center=CENTER, radius=RADIUS))


def _ball_grid(center=CENTER, resolution=(8, 4, 4, 4), radius=RADIUS):
    return make_chart(
        GridSpec(
            topology="polar-ball",
            extents=[radius],
            resolution=list(resolution),
            center=list(center),
            radial_breaks=[0.6, 0.92],
        )
    )


def _inside_points():
    directions = np.array([[1.0, 0.0, 0.0, 0.0], [0.5, -0.5, 0.5, 0.5], [0.0, 0.6, 0.0, -0.8]])
    return CENTER + np.array([0.1, 0.35, 0.48])[:, None] * directions


def test_psi_jets_match_autodiff_of_closed_form(psi):
    points = _inside_points()
    by_profile = psi.jets(points, 4)
    by_autodiff = ScalarField.from_fn(psi.fn, label="ad").jets(points, 4)
    for left, right in zip(by_profile.derivs, by_autodiff.derivs):
        assert relative_residual(left, right) < 1e-9


def test_psi_values(psi, profile):
    outside = psi.jet(CENTER + np.array([0.0, 0.0, 0.6, 0.0]), 2)
    assert float(outside.value) == 1.0
    assert not np.any(np.asarray(outside.hess))
    center = psi.jet(CENTER, 2)
    assert float(center.value) == pytest.approx(profile.delta)
    assert not np.any(np.asarray(center.grad))


def test_psi_is_radial_with_steep_window(psi):
    points = _inside_points()
    grad = np.asarray(psi.jets(points, 1).grad)
    normals = (points - CENTER) / np.linalg.norm(points - CENTER, axis=1)[:, None]
    radial = np.einsum("ni,ni->n", grad, normals)
    np.testing.assert_allclose(grad, radial[:, None] * normals, atol=1e-12)
    window = psi.jet(CENTER + 0.75 * RADIUS * np.array([1.0, 0.0, 0.0, 0.0]), 1)
    assert float(window.grad[0]) >= 1.0 / RADIUS


def test_eta_is_twice_the_root(psi):
    points = _inside_points()
    np.testing.assert_allclose(eta_field(psi).values(points), 2.0 * np.sqrt(psi.values(points)))


def test_psi_wraps_on_periodic_domains(profile):
    periods = np.full(4, 2 * math.pi)
    wrapped = psi_field(profile, Ball(center=np.array([0.1, 3.0, 3.0, 3.0]), radius=RADIUS), periods=periods)
    inside = np.array([[2 * math.pi - 0.1, 3.0, 3.0, 3.0]])
    assert float(wrapped.values(inside)[0]) < 1.0


def test_psi_rejects_mismatched_inputs(profile):
    with pytest.raises(InvalidSpecError):
        psi_field(profile, [Ball(CENTER, 0.5), Ball(CENTER + 2.0, 0.4)])
    with pytest.raises(InvalidSpecError):
        psi_field(profile, Ball(CENTER, RADIUS), _ball_grid(center=np.zeros(4)))


def test_double_deformation_routes_agree(bach_wave):
    psi = ScalarField.from_fn(lambda x: jnp.exp(0.2 * jnp.sin(x[0] + x[3])), label="psi")
    result = double_deformation(bach_wave, psi, 0.7, _inside_points())
    assert result.mismatch <= get_config().route_tol


def test_trivial_double_deformation_is_the_base_metric(bach_wave):
    result = double_deformation(bach_wave, ScalarField.constant(1.0), 3.0, _inside_points())
    for left, right in zip(result.direct.jets(_inside_points(), 2).derivs, bach_wave.jets(_inside_points(), 2).derivs):
        np.testing.assert_allclose(left, right, atol=1e-14)


def test_phi_without_deformation_is_the_scalar_integral(round_s4):
    grid = _ball_grid(center=np.zeros(4), resolution=(4, 4, 4, 4))
    phi = evaluate_phi(round_s4, ScalarField.constant(1.0), 5.0, 0.0, grid)
    expected = 12.0 * integrate(1.0, grid, round_s4)
    assert phi.phi_direct == pytest.approx(expected, rel=1e-10)
    assert phi.phi_formula == pytest.approx(expected, rel=1e-10)
    assert phi.radial and set(phi.radial[0]) == {"rho", "F_tilde", "S_tilde"}


def test_phi_identity_for_conformal_scaling(flat_ball, profile):
    grid = _ball_grid(center=np.zeros(4))
    psi = psi_field(profile, Ball(np.zeros(4), RADIUS), grid)
    phi = evaluate_phi(flat_ball, psi, 0.0, 0.0, grid)
    assert phi.residual < 1e-10
    assert phi.phi_direct > 0


def test_select_k_prefers_first_of_equal_candidates(bach_wave):
    grid = make_chart(GridSpec(topology="polar-ball", extents=[RADIUS], resolution=[4, 4, 4, 4], center=[3.0] * 4))
    selection = select_k(bach_wave, ScalarField.constant(1.0), [1.0, 2.0], grid)
    assert selection.k == 1.0
    assert selection.min_norms[0] == pytest.approx(selection.min_norms[1])
    assert not selection.degenerate


def test_select_k_on_flat_metric_is_degenerate(flat_ball):
    grid = make_chart(GridSpec(topology="polar-ball", extents=[RADIUS], resolution=[4, 4, 4, 4]))
    with pytest.raises(AllCandidatesDegenerateError):
        select_k(flat_ball, ScalarField.constant(1.0), [1.0, 5.0], grid)
    with pytest.raises(InvalidSpecError):
        select_k(flat_ball, ScalarField.constant(1.0), [], grid)


def test_bound_sampler(flat_ball, small_box):
    grid = make_chart(GridSpec(topology="polar-ball", extents=[RADIUS], resolution=[4, 4, 4, 4]))
    samples = bound_sampler(flat_ball, ScalarField.constant(1.0), [1.0, 10.0], grid)
    assert [s.k for s in samples] == [1.0, 10.0]
    assert all(s.q == pytest.approx(0.0, abs=1e-6) for s in samples)
    with pytest.raises(InvalidSpecError):
        bound_sampler(flat_ball, ScalarField.constant(1.0), [1.0], small_box)


def test_ball_lattice(bach_wave, flat_ball):
    sites = ball_sites(bach_wave, 0.5)
    assert len(sites) == 6 ** 4
    assert min(np.linalg.norm(sites[0] - s) for s in sites[1:]) >= 1.0
    np.testing.assert_allclose(ball_sites(flat_ball, 0.5)[0], np.zeros(4))
    with pytest.raises(InvalidSpecError):
        ball_sites(flat_ball, 1.5)


def test_ball_count_grows_with_nu():
    counts = [ball_count(100, 100, nu) for nu in (0.0, 0.5, 1.0, 3.0)]
    assert counts == sorted(counts)
    assert counts[0] == 0
    assert ball_count(1, 5, 10.0) == 1


def test_construction_params_validation():
    with pytest.raises(ValidationError):
        ConstructionParams(radius=0.0)
    with pytest.raises(ValidationError):
        ConstructionParams(k_candidates=[])
    with pytest.raises(ValidationError):
        ConstructionParams(nu=-1.0)


def test_construction_without_balls_is_not_negative(flat_ball):
    params = ConstructionParams(nu=0.0, polar_resolution=[4, 4, 4, 4])
    with pytest.raises(PhiNotNegativeError) as excinfo:
        run_construction(flat_ball, 0.0, params)
    report = excinfo.value.report
    assert report.phi_value == pytest.approx(0.0, abs=1e-12)
    assert report.coverage.balls == 0
    assert not report.success


def test_construction_succeeds_on_negative_torus(bach_wave):
    params = ConstructionParams(
        radius=0.25,
        nu=1.0,
        k_candidates=[0.05],
        polar_resolution=[16, 6, 6, 6],
        grid=GridSpec(resolution=[8, 4, 4, 4]),
    )
    report = run_construction(bach_wave, 0.0, params)
    assert report.success
    assert report.phi_value < 0
    assert report.phi_residual <= get_config().phi_tol
    assert report.base_integral < report.phi_value
    assert report.coverage.balls == 1
    assert report.coverage.mean_f == pytest.approx(-0.04 / 1.92, rel=1e-8)


def test_scalar_bach_construction_succeeds_on_hyperbolic_product():
    g = get_metric("h2xh2")
    params = ConstructionParams(radius=0.6, nu=1.0, k_candidates=[0.05], polar_resolution=[16, 8, 4, 4])
    report = run_construction(g, 1.0, params)
    assert report.success
    assert report.phi_value < 0
    assert report.phi_residual <= get_config().phi_tol
    assert report.min_bach_norm > get_config().bach_floor
    assert report.k_chosen == 0.05
    assert len(report.per_ball) == 1
    assert report.per_ball[0].route_mismatch <= get_config().route_tol
    assert report.radial_profile and "bach_bar" in report.radial_profile[0]
    assert report.profile_checks and all(report.profile_checks.values())
    assert report.coverage.capacity == 1


def test_under_resolved_phi_is_not_a_success(flat_ball):
    params = ConstructionParams(k_candidates=[50.0], polar_resolution=[4, 4, 4, 4])
    with pytest.raises(PhiUnresolvedError) as excinfo:
        run_construction(flat_ball, 0.0, params)
    report = excinfo.value.report
    assert report.phi_residual > get_config().phi_tol
    assert not report.success
    assert report.notes


def test_phi_routes_agree_on_a_resolved_ball(flat_ball, profile):
    grid = _ball_grid(center=np.zeros(4), resolution=(16, 4, 4, 4))
    psi = psi_field(profile, Ball(np.zeros(4), RADIUS), grid)
    phi = evaluate_phi(flat_ball, psi, 0.2, 0.0, grid)
    assert phi.residual <= get_config().phi_tol


def test_bound_sampler_stays_bounded_as_k_grows(bach_wave, profile):
    center = np.full(4, 3.0)
    grid = _ball_grid(center=center, resolution=(4, 4, 4, 4))
    psi = psi_field(profile, Ball(center, RADIUS), grid, periods=bach_wave.domain.periods)
    samples = bound_sampler(bach_wave, psi, [1.0, 10.0, 100.0, 1000.0], grid)
    values = [s.q for s in samples]
    assert all(np.isfinite(values))
    assert max(values) <= 2.0 * values[-1] + 1e-6


def test_phi_does_not_increase_with_nu(round_s4):
    values = []
    for nu in (0.0, 1.0, 3.0):
        params = ConstructionParams(radius=1.0, nu=nu, k_candidates=[0.05], polar_resolution=[16, 4, 4, 4])
        with pytest.raises(PhiNotNegativeError) as excinfo:
            run_construction(round_s4, 0.0, params)
        values.append(excinfo.value.report.phi_value)
    assert all(later <= earlier for earlier, later in zip(values, values[1:]))
    assert values[1] < values[0]


def test_double_deformation_leaves_the_base_outside_the_ball(bach_wave, psi):
    directions = np.array([[1.0, 0.0, 0.0, 0.0], [0.5, -0.5, 0.5, 0.5], [0.0, 0.6, 0.0, -0.8]])
    outside = CENTER + np.array([0.55, 0.8, 1.2])[:, None] * directions
    result = double_deformation(bach_wave, psi, 5.0, outside)
    for left, right in zip(result.direct.jets(outside, 2).derivs, bach_wave.jets(outside, 2).derivs):
        np.testing.assert_allclose(left, right, atol=1e-14)
