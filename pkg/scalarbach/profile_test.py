import jax
import numpy as np
import pytest

from scalarbach.profile import (
    SLOPE_WINDOW,
    bump_profile,
    check_profile,
    max_feasible_delta,
    smoothness_jumps,
)
from scalarbach.utils import InfeasibleDeltaError, InvalidSpecError


@pytest.mark.parametrize("delta", [0.1, 0.2, 0.3])
def test_profile_properties(delta):
    profile = bump_profile(delta)
    result = check_profile(profile, samples=2000)
    assert result.passed, result.checks
    assert set(result.checks) == {"even", "one_outside", "floor", "increasing", "slope_window", "boundary_ratio"}
    assert result.details["min_slope_window"] >= 1.0
    assert max(smoothness_jumps(profile)) <= 1e-6


def test_profile_values():
    profile = bump_profile(0.3)
    assert float(profile(0.0)) == pytest.approx(0.3)
    assert float(profile(1.0)) == pytest.approx(1.0)
    assert float(profile(-1.7)) == 1.0
    assert float(profile.derivatives(SLOPE_WINDOW[0], 1)[1]) == pytest.approx(profile.slope)


def test_derivatives_match_autodiff():
    profile = bump_profile(0.2)
    first = jax.grad(profile)
    second = jax.grad(first)
    for x in (0.3, -0.45, 0.7, 0.95, 0.99):
        _, d1, d2 = profile.derivatives(x, 2)
        assert float(first(x)) == pytest.approx(float(d1), rel=1e-10, abs=1e-12)
        assert float(second(x)) == pytest.approx(float(d2), rel=1e-10, abs=1e-12)


def test_infeasible_delta_reports_the_largest_feasible_value():
    with pytest.raises(InfeasibleDeltaError) as excinfo:
        bump_profile(0.5)
    assert excinfo.value.delta_max == pytest.approx(max_feasible_delta())
    assert max_feasible_delta() == pytest.approx(0.34)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.2])
def test_delta_out_of_range(delta):
    with pytest.raises(InvalidSpecError):
        bump_profile(delta)


def test_derivative_order_is_bounded():
    with pytest.raises(InvalidSpecError):
        bump_profile(0.3).derivatives(np.array([0.5]), 6)
