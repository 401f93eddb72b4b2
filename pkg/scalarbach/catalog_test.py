import math

import numpy as np
import pytest

from scalarbach.catalog import CATALOG, compile_expression, get_metric, product_bach_oracle, user_metric
from scalarbach.utils import InvalidSpecError, UnknownMetricError


def test_every_catalog_metric_builds_at_its_origin():
    for name, entry in CATALOG.items():
        metric = get_metric(name)
        jet = metric.jet([0.0, 0.0, 0.0, 0.0], 2)
        assert np.all(np.linalg.eigvalsh(np.asarray(jet.g)) > 0), name
        assert metric.domain.periodic == entry.periodic, name


def test_unknown_metric_and_parameter():
    with pytest.raises(UnknownMetricError):
        get_metric("klein-bottle")
    with pytest.raises(InvalidSpecError):
        get_metric("bach-wave", {"amplitude": 0.1})
    with pytest.raises(InvalidSpecError):
        get_metric("bach-wave", {"epsilon": 1.5})


def test_expressions_evaluate():
    fn = compile_expression("sin(x1) + x2**2 - pi/2")
    assert float(fn(np.array([math.pi / 2, 3.0, 0.0, 0.0]))) == pytest.approx(1.0 + 9.0 - math.pi / 2)


@pytest.mark.parametrize("text", ["__import__('os')", "x1.real", "open('f')", "x5 + 1", "sin(x1, x2)", "1 +"])
def test_unsafe_or_malformed_expressions_are_rejected(text):
    with pytest.raises(InvalidSpecError):
        compile_expression(text)


def test_user_metric_fills_identity():
    metric = user_metric({"12": "0.1", "33": "2"})
    g = np.asarray(metric.jet([0.0, 0.0, 0.0, 0.0], 0).g)
    expected = np.eye(4)
    expected[0, 1] = expected[1, 0] = 0.1
    expected[2, 2] = 2.0
    np.testing.assert_allclose(g, expected)


def test_user_metric_rejects_bad_keys():
    with pytest.raises(InvalidSpecError):
        user_metric({"15": "1"})
    with pytest.raises(InvalidSpecError):
        user_metric({"a1": "1"})


def test_bach_oracle_for_unequal_product():
    g = np.diag([4.0, 4.0, 4.0, 4.0])
    oracle = product_bach_oracle(1.0, 0.25, g)
    ginv = np.linalg.inv(g)
    norm = math.sqrt(np.einsum("ij,kl,ik,jl->", oracle, oracle, ginv, ginv))
    assert norm == pytest.approx(5 / 16)
    assert not np.any(product_bach_oracle(1.0, 1.0, g))
