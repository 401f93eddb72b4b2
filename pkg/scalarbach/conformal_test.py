import math

import jax.numpy as jnp
import numpy as np
import pytest

from scalarbach.catalog import get_metric, scalar_from_expression
from scalarbach.config import ConformalConvention, CurvatureKind
from scalarbach.conformal import (
    ConformalFactor,
    bach_covariance_residual,
    conformal_curvature_laws,
    conformal_laws_residual,
    conformal_metric,
    covariance_residual,
    modified_laplacian_apply,
    scalar_bach,
    scalar_weyl,
    scaled_metric,
)
from scalarbach.jets import ScalarField
from scalarbach.utils import FactorNotPositiveError, PsiNotPositiveError


P = [0.3, -0.4, 0.2, 0.1]


def test_closed_form_laws_match_direct_computation(bach_wave):
    psi = ScalarField.from_fn(lambda x: jnp.exp(0.2 * jnp.sin(x[0] + x[2])), label="psi")
    residuals = conformal_laws_residual(bach_wave, psi, P)
    assert set(residuals) == {"scalar", "ricci", "bach", "volume_ratio", "hess_psi"}
    assert max(residuals.values()) < 1e-8


def test_conformal_metric_reproduces_catalog_entry(euclidean):
    tilde = conformal_metric(euclidean, ConformalFactor(scalar_from_expression("0.1*sin(x1)")))
    reference = get_metric("conformally-flat", {"amplitude": 0.1})
    for left, right in zip(tilde.jet(P, 3).derivs, reference.jet(P, 3).derivs):
        np.testing.assert_allclose(left, right, atol=1e-12)


def test_power_convention_matches_exponential(bach_wave):
    u = scalar_from_expression("0.1*sin(x1)*cos(x2)")
    exponential = conformal_metric(bach_wave, ConformalFactor(u))
    power = conformal_metric(bach_wave, ConformalFactor(u.exp(1.0), ConformalConvention.POWER))
    for left, right in zip(exponential.jet(P, 2).derivs, power.jet(P, 2).derivs):
        np.testing.assert_allclose(left, right, atol=1e-12)


def test_scalar_bach_covariance(bach_wave):
    factor = ConformalFactor(scalar_from_expression("0.1*sin(x1) + 0.05*cos(x2)"))
    phi = scalar_from_expression("1 + 0.2*cos(x2)")
    assert covariance_residual(bach_wave, factor, 1.0, phi, P) < 1e-6
    assert covariance_residual(bach_wave, factor, 0.7, phi, P, kind=CurvatureKind.SCALAR_WEYL) < 1e-6
    assert bach_covariance_residual(bach_wave, factor, P) < 1e-6


def test_mixed_curvature_values(round_s4):
    weyl = scalar_weyl(round_s4, P, 3.0)
    assert weyl.value == pytest.approx(12.0, abs=1e-8)
    product = scalar_bach(get_metric("s2xs2"), P, 1.0)
    assert product.scalar == pytest.approx(4.0, rel=1e-12)
    assert product.value == pytest.approx(4.0, abs=1e-3)


def test_modified_laplacian_of_sine(euclidean):
    phi = scalar_from_expression("sin(x1)")
    assert modified_laplacian_apply(euclidean, 0.0, phi, [math.pi / 2, 0, 0, 0]) == pytest.approx(6.0)


def test_non_positive_factors_are_rejected(euclidean):
    with pytest.raises(PsiNotPositiveError):
        scaled_metric(euclidean, ScalarField.constant(-1.0)).jet(P, 0)
    with pytest.raises(FactorNotPositiveError):
        conformal_metric(euclidean, ConformalFactor(ScalarField.constant(-2.0), ConformalConvention.POWER)).jet(P, 0)


def test_constant_scaling_of_the_sphere(round_s4):
    laws = conformal_curvature_laws(round_s4, ScalarField.constant(4.0), P)
    metric = np.asarray(round_s4.jet(P, 0).g)
    assert laws.scalar == pytest.approx(3.0, rel=1e-12)
    np.testing.assert_allclose(laws.ricci, 3.0 * metric, atol=1e-10)
    assert laws.volume_ratio == 16.0
    assert not np.any(laws.hess_psi)
    assert np.max(np.abs(laws.bach)) < 1e-8
