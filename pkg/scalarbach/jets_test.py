import jax.numpy as jnp
import numpy as np
import pytest

from scalarbach.catalog import user_metric
from scalarbach.config import Provenance
from scalarbach.jets import MetricJet, ScalarField, central_stencil, jet_of_metric, set_partitions
from scalarbach.utils import InsufficientJetOrderError, PDViolationError


POINTS = np.array([[0.3, -0.2, 0.5, 1.1], [1.0, 0.4, -0.7, 0.2]])


def _base():
    return ScalarField.from_fn(lambda x: 0.4 * jnp.sin(x[0] + 2 * x[1]) + 0.1 * x[2] * x[3], label="base")


def _close(a, b, atol=1e-10):
    for left, right in zip(a.derivs, b.derivs):
        np.testing.assert_allclose(np.asarray(left), np.asarray(right), atol=atol, rtol=1e-10)


def test_set_partitions_are_bell_numbers():
    assert [len(set_partitions(m)) for m in range(6)] == [1, 1, 2, 5, 15, 52]


def test_composition_matches_autodiff():
    f = _base()
    by_chain = f.exp(1.5).jets(POINTS, 5)
    direct = ScalarField.from_fn(lambda x: jnp.exp(1.5 * f.fn(x)), label="direct").jets(POINTS, 5)
    _close(by_chain, direct)


def test_sqrt_and_power_match_autodiff():
    shifted = _base().plus(ScalarField.constant(2.0))
    _close(shifted.sqrt().jets(POINTS, 4), ScalarField.from_fn(lambda x: jnp.sqrt(shifted.fn(x)), label="s").jets(POINTS, 4))
    _close(
        shifted.power(-1.5).jets(POINTS, 4),
        ScalarField.from_fn(lambda x: shifted.fn(x) ** -1.5, label="p").jets(POINTS, 4),
    )


def test_product_rule_matches_autodiff():
    f = _base()
    g = ScalarField.from_fn(lambda x: jnp.cos(x[3]) + x[0] ** 2, label="g")
    _close(f.times(g).jets(POINTS, 4), ScalarField.from_fn(lambda x: f.fn(x) * g.fn(x), label="fg").jets(POINTS, 4))


def test_constant_field_has_zero_derivatives():
    jet = ScalarField.constant(3.0).jet([0.1, 0.2, 0.3, 0.4], 3)
    assert float(jet.value) == 3.0
    assert not np.any(np.asarray(jet.third))


def test_flat_metric_jet(euclidean):
    jet = jet_of_metric(euclidean, [0.5, 0.5, 0.5, 0.5])
    assert isinstance(jet, MetricJet)
    assert jet.order == 4
    np.testing.assert_allclose(jet.g, np.eye(4))
    assert not np.any(np.asarray(jet.d4g))


def test_jet_order_is_capped(euclidean):
    with pytest.raises(InsufficientJetOrderError):
        jet_of_metric(euclidean, [0.0, 0.0, 0.0, 0.0], order=5)


def test_finite_difference_jets_agree_with_autodiff():
    components = {"11": "1 + 0.2*sin(x2)", "23": "0.1*cos(x1 + x4)"}
    exact = user_metric(components)
    approx = user_metric(components, provenance=Provenance.FINITE_DIFFERENCE)
    a = exact.jets(POINTS, 2)
    b = approx.jets(POINTS, 2)
    np.testing.assert_allclose(b.g, a.g, atol=1e-14)
    np.testing.assert_allclose(b.dg, a.dg, atol=1e-7)
    np.testing.assert_allclose(b.d2g, a.d2g, atol=1e-6)


def test_indefinite_metric_is_rejected():
    with pytest.raises(PDViolationError):
        user_metric({"11": "-1"}).jet([0.0, 0.0, 0.0, 0.0], 0)


def test_central_stencil_differentiates_polynomials():
    offsets, weights = central_stencil(2, 6)
    assert float(np.dot(weights, offsets ** 2)) == pytest.approx(2.0)
    assert float(np.dot(weights, offsets ** 3)) == pytest.approx(0.0, abs=1e-12)
