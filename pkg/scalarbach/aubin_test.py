import jax.numpy as jnp
import numpy as np
import pytest

from scalarbach.aubin import (
    DeformationSpec,
    aubin_integral_condition,
    bach_error,
    conformal_error_scaling_check,
    deform_metric,
    deformed_curvature_closed,
    deformed_inverse_and_volume,
    norm_domination,
    scalar_integral_identity,
)
from scalarbach.catalog import scalar_from_expression
from scalarbach.chart import GridSpec, make_chart
from scalarbach.curvature import curvature_bundle
from scalarbach.jets import ScalarField
from scalarbach.utils import InvalidSpecError, NonPeriodicGridError


P = [0.3, -0.4, 0.2, 0.1]


@pytest.fixture
def wave_f():
    return scalar_from_expression("0.3*sin(x1 + x2)")


def test_closed_form_curvature_matches_direct(bach_wave, wave_f):
    spec = DeformationSpec(wave_f, 1.3)
    closed = deformed_curvature_closed(bach_wave, spec, P)
    direct = curvature_bundle(deform_metric(bach_wave, spec).jet(P, 2))
    np.testing.assert_allclose(closed.gamma_closed, direct.gamma, atol=1e-10)
    np.testing.assert_allclose(closed.riemann_closed, direct.riemann, atol=1e-10)
    np.testing.assert_allclose(closed.ricci_closed, direct.ricci, atol=1e-10)
    assert closed.scalar_closed == pytest.approx(direct.scalar, abs=1e-10)


def test_inverse_and_volume_of_deformed_metric(bach_wave, wave_f):
    jet = bach_wave.jet(P, 0)
    jet_f = wave_f.jet(P, 1)
    inv_bar, ratio = deformed_inverse_and_volume(jet, jet_f)
    g = np.asarray(jet.g)
    g_bar = g + np.outer(jet_f.grad, jet_f.grad)
    np.testing.assert_allclose(inv_bar @ g_bar, np.eye(4), atol=1e-13)
    assert ratio == pytest.approx(np.sqrt(np.linalg.det(g_bar) / np.linalg.det(g)), rel=1e-12)


def test_linear_deformation_of_flat_metric_is_bach_flat(euclidean):
    spec = DeformationSpec(scalar_from_expression("0.3*x1 + 0.2*x2"))
    assert np.max(np.abs(bach_error(euclidean, spec, P))) < 1e-12
    spec_zero = DeformationSpec(scalar_from_expression("0.3*x1"), 0.0)
    assert not np.any(bach_error(euclidean, spec_zero, P))


def test_error_scales_conformally(bach_wave):
    psi = ScalarField.from_fn(lambda x: jnp.exp(0.2 * jnp.sin(x[0])), label="psi")
    assert conformal_error_scaling_check(bach_wave, psi, 0.7, P) < 1e-6


def test_integral_identities(bach_wave, wave_f):
    grid = make_chart(GridSpec(resolution=[24, 24, 4, 4]))
    spec = DeformationSpec(wave_f)
    lhs, rhs = scalar_integral_identity(bach_wave, spec, grid)
    assert abs(lhs - rhs) / (1.0 + abs(rhs)) < 1e-8
    condition = aubin_integral_condition(bach_wave, spec, grid, 0.0)
    assert condition.residual < 1e-8


def test_deformed_norm_is_dominated(bach_wave, wave_f, rng):
    jet = bach_wave.jet(P, 0)
    jet_f = wave_f.jet(P, 1)
    for rank in (1, 2, 3):
        result = norm_domination(jet, jet_f, rank=rank, samples=20, rng=rng)
        assert result.max_ratio <= 1.0 + 1e-12


def test_invalid_inputs(flat_ball, wave_f):
    with pytest.raises(InvalidSpecError):
        DeformationSpec(wave_f, -1.0)
    grid = make_chart(GridSpec(topology="polar-ball", extents=[0.5], resolution=[4, 4, 4, 4]))
    with pytest.raises(NonPeriodicGridError):
        scalar_integral_identity(flat_ball, DeformationSpec(wave_f), grid)
