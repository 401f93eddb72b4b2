import math

import numpy as np
import pytest

from scalarbach.catalog import get_metric, product_bach_oracle, user_metric
from scalarbach.chart import GridSpec, make_chart
from scalarbach.config import BachFormula
from scalarbach.curvature import (
    bach_divergence,
    bach_from_jet,
    bach_ricci_form,
    bach_weyl_form,
    christoffel,
    curvature_bundle,
    first_bianchi_residual,
    invariants,
    kulkarni_nomizu,
    reconstruct_riemann,
    tensor_norm,
    weyl_trace_residual,
)
from scalarbach.utils import InsufficientJetOrderError, NonPeriodicGridError, RankMismatchError


P = [0.3, -0.4, 0.2, 0.1]


def test_flat_metric_has_no_curvature(euclidean):
    bundle = curvature_bundle(euclidean.jet(P, 2))
    assert not np.any(bundle.riemann)
    assert bundle.scalar == 0.0
    assert not np.any(bach_ricci_form(euclidean, P).b)


def test_round_sphere_is_einstein_and_conformally_flat(round_s4):
    jet = round_s4.jet(P, 4)
    bundle = curvature_bundle(jet)
    assert bundle.scalar == pytest.approx(12.0, rel=1e-12)
    np.testing.assert_allclose(bundle.ricci, 3.0 * np.asarray(jet.g), atol=1e-10)
    assert tensor_norm(bundle.weyl, jet) < 1e-10
    assert tensor_norm(bach_from_jet(jet), jet) < 1e-8


def test_christoffel_of_a_polar_type_chart():
    # x1 plays the radial coordinate; Gamma^rho_ij = -1/2 d_rho g_ij
    metric = user_metric({"22": "1 + 0.1*x1**2*sin(x3)"})
    gamma, dgamma = christoffel(metric.jet([0.5, 0.0, 1.0, 0.0], 2))
    assert gamma[0, 1, 1] == pytest.approx(-0.05 * math.sin(1.0), rel=1e-12)
    assert dgamma.shape == (4, 4, 4, 4)
    np.testing.assert_allclose(gamma, np.swapaxes(gamma, 1, 2), atol=1e-15)


def test_bach_wave_scalar_and_symmetries(bach_wave):
    eps = 0.2
    jet = bach_wave.jet(P, 4)
    bundle = curvature_bundle(jet)
    assert bundle.scalar == pytest.approx(-eps ** 2 / (2 * (1 - eps ** 2)), rel=1e-10)
    assert first_bianchi_residual(bundle.riemann) < 1e-12
    assert weyl_trace_residual(bundle.weyl, np.asarray(jet.g)) < 1e-12
    rebuilt = reconstruct_riemann(bundle.weyl, bundle.ricci, bundle.scalar, np.asarray(jet.g))
    np.testing.assert_allclose(rebuilt, bundle.riemann, atol=1e-12)


def test_bach_forms_agree_and_are_trace_free(bach_wave):
    ricci_form = bach_ricci_form(bach_wave, P).b
    weyl_form = bach_weyl_form(bach_wave, P).b
    ginv = np.linalg.inv(np.asarray(bach_wave.jet(P, 0).g))
    scale = 1.0 + np.max(np.abs(ricci_form))
    assert np.max(np.abs(ricci_form - weyl_form)) / scale < 1e-6
    assert abs(np.einsum("ij,ij->", ginv, ricci_form)) < 1e-9
    np.testing.assert_allclose(ricci_form, ricci_form.T)
    assert tensor_norm(ricci_form, bach_wave.jet(P, 0)) > 1e-4


def test_unequal_product_matches_oracle():
    metric = get_metric("s2xs2-unequal")
    jet = metric.jet(P, 4)
    bach = bach_from_jet(jet, BachFormula.WEYL)
    oracle = product_bach_oracle(1.0, 0.25, np.asarray(jet.g))
    np.testing.assert_allclose(bach, oracle, atol=1e-6)
    assert tensor_norm(bach, jet) == pytest.approx(5 / 16, rel=1e-6)


def test_hyperbolic_product_matches_oracle():
    jet = get_metric("h2xh2").jet(P, 4)
    k1, k2 = -1.0, -1.0 / 1.1 ** 2
    bach = bach_from_jet(jet, BachFormula.WEYL)
    np.testing.assert_allclose(bach, product_bach_oracle(k1, k2, np.asarray(jet.g)), atol=1e-6)
    assert curvature_bundle(jet).scalar == pytest.approx(2.0 * (k1 + k2), rel=1e-10)
    assert tensor_norm(bach, jet) == pytest.approx((k1 ** 2 - k2 ** 2) / 3.0, rel=1e-6)


def test_equal_product_is_bach_flat():
    jet = get_metric("s2xs2").jet(P, 4)
    assert curvature_bundle(jet).scalar == pytest.approx(4.0, rel=1e-12)
    assert tensor_norm(bach_from_jet(jet), jet) < 1e-8


def test_batched_invariants_match_pointwise(bach_wave, rng):
    points = rng.uniform(0, 2 * math.pi, size=(3, 4))
    inv = invariants(bach_wave, points)
    for n, p in enumerate(points):
        jet = bach_wave.jet(p, 4)
        assert inv.scalar[n] == pytest.approx(curvature_bundle(jet).scalar, abs=1e-12)
        np.testing.assert_allclose(inv.bach[n], bach_from_jet(jet), atol=1e-10)
    # homogeneous metric
    np.testing.assert_allclose(inv.bach_norm, inv.bach_norm[0], rtol=1e-8)


def test_bach_is_divergence_free(bach_wave, wave_box):
    assert np.max(bach_divergence(bach_wave, wave_box)) < 1e-5


def test_divergence_needs_periodic_grid(flat_ball):
    grid = make_chart(GridSpec(topology="polar-ball", extents=[0.5], resolution=[4, 4, 4, 4]))
    with pytest.raises(NonPeriodicGridError):
        bach_divergence(flat_ball, grid)


def test_errors_on_bad_inputs(euclidean):
    jet = euclidean.jet(P, 2)
    with pytest.raises(InsufficientJetOrderError):
        bach_from_jet(jet)
    with pytest.raises(RankMismatchError):
        tensor_norm(np.zeros((4, 3)), jet)


def test_round_sphere_has_constant_sectional_curvature(round_s4):
    jet = round_s4.jet(P, 2)
    g = np.asarray(jet.g)
    bundle = curvature_bundle(jet)
    np.testing.assert_allclose(bundle.riemann, 0.5 * np.asarray(kulkarni_nomizu(g, g)), atol=1e-10)
