from __future__ import annotations

from dataclasses import dataclass, field
import logging

import jax.numpy as jnp
import numpy as np
from numpy.polynomial import polynomial as P

from .utils import InfeasibleDeltaError, InvalidSpecError


logger = logging.getLogger(__name__)

# Degree-9 smoothstep: S(0) = 0, S(1) = 1, first four derivatives vanish at both ends.
_SMOOTHSTEP = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0])
_RAMP = P.polyint(_SMOOTHSTEP)
# Contact order of the ramp at x = 1; bounds |y''| (1 - x) / y' near the boundary.
BOUNDARY_CONSTANT = 5.0
SLOPE_WINDOW = ((1.0 / 4.0) ** (1.0 / 3.0), (3.0 / 4.0) ** (1.0 / 3.0))


def _horner(coefficients: np.ndarray, s):
    out = jnp.zeros_like(s) + coefficients[-1]
    for c in coefficients[-2::-1]:
        out = out * s + c
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Even C^4 profile: y = delta near 0, slope c on [a, b], y = 1 for |x| >= 1."""

    delta: float
    a: float = 0.6
    b: float = 0.92

    @property
    def plateau_integral(self) -> float:
        return 0.5 * (1.0 + self.b - self.a)

    @property
    def slope(self) -> float:
        return (1.0 - self.delta) / self.plateau_integral

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (0.0, self.a, self.b, 1.0)

    def derivatives(self, x, order: int = 0) -> tuple:
        """y, y', ..., y^(order) at x (numpy or jax arrays)."""
        if not 0 <= order <= 5:
            raise InvalidSpecError("order must be between 0 and 5")
        x = jnp.asarray(x, dtype=jnp.float64)
        r = jnp.abs(x)
        sign = jnp.where(x < 0, -1.0, 1.0)
        a, b, c, delta = self.a, self.b, self.slope, self.delta
        tail = 1.0 - b
        s_left = jnp.clip(r / a, 0.0, 1.0)
        s_right = jnp.clip((1.0 - r) / tail, 0.0, 1.0)
        in_left = r <= a
        in_middle = (r > a) & (r <= b)
        in_right = (r > b) & (r < 1.0)

        out = []
        for m in range(order + 1):
            if m == 0:
                left = delta + c * a * _horner(_RAMP, s_left)
                middle = delta + c * (0.5 * a + (r - a))
                right = 1.0 - c * tail * _horner(_RAMP, s_right)
                outside = jnp.ones_like(r)
            else:
                stepped = P.polyder(_SMOOTHSTEP, m - 1) if m > 1 else _SMOOTHSTEP
                left = c * a ** (1 - m) * _horner(stepped, s_left)
                middle = jnp.full_like(r, c if m == 1 else 0.0)
                right = (-1.0) ** (m + 1) * c * tail ** (1 - m) * _horner(stepped, s_right)
                outside = jnp.zeros_like(r)
            value = jnp.where(in_left, left, jnp.where(in_middle, middle, jnp.where(in_right, right, outside)))
            out.append(value * sign ** m)
        return tuple(out)

    def __call__(self, x):
        return self.derivatives(x, 0)[0]


@dataclass
class ProfileCheck:
    samples: int
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def max_feasible_delta(a: float = 0.6, b: float = 0.92) -> float:
    return 1.0 - 0.5 * (1.0 + b - a)


def bump_profile(delta: float, *, a: float = 0.6, b: float = 0.92) -> BumpProfile:
    """Profile with floor delta whose slope is at least 1 on the mandated window."""
    if not 0.0 < delta < 1.0:
        raise InvalidSpecError("delta must lie in (0, 1)")
    if not (0.0 < a <= SLOPE_WINDOW[0] and SLOPE_WINDOW[1] <= b < 1.0):
        raise InvalidSpecError("breakpoints must enclose the slope window")
    delta_max = max_feasible_delta(a, b)
    if delta > delta_max + 1e-15:
        raise InfeasibleDeltaError(
            f"delta={delta:g} leaves slope below 1; the largest feasible delta is {delta_max:g}",
            delta_max=delta_max,
        )
    profile = BumpProfile(delta=float(delta), a=a, b=b)
    logger.info("[profile] bump | delta=%g slope=%.6f", profile.delta, profile.slope)
    return profile


def check_profile(profile: BumpProfile, samples: int = 10_000) -> ProfileCheck:
    """Sample the six defining properties of the profile."""
    x = np.linspace(0.0, 1.0, samples + 2)[1:-1]
    y, dy = (np.asarray(v) for v in profile.derivatives(x, 1))
    y_neg = np.asarray(profile(-x))
    outside = np.asarray(profile.derivatives(np.linspace(1.0, 2.0, 101), 1)[0])
    outside_neg = np.asarray(profile(-np.linspace(1.0, 2.0, 101)))

    lo, hi = SLOPE_WINDOW
    window = np.linspace(lo, hi, max(samples // 10, 10))
    window_slope = np.asarray(profile.derivatives(window, 1)[1])

    x_boundary = 1.0 - (1.0 - profile.b) * 2.0 ** -np.arange(0, 31, dtype=float)
    _, d1, d2 = (np.asarray(v) for v in profile.derivatives(x_boundary, 2))
    ratio = np.abs(d2) * (1.0 - x_boundary) / d1

    result = ProfileCheck(samples=samples)
    result.checks = {
        "even": bool(np.array_equal(y, y_neg)),
        "one_outside": bool(np.all(outside == 1.0) and np.all(outside_neg == 1.0)),
        "floor": bool(np.min(y) >= profile.delta and profile.delta > 0),
        "increasing": bool(np.all(dy > 0)),
        "slope_window": bool(np.min(window_slope) >= 1.0),
        "boundary_ratio": bool(np.max(ratio) <= BOUNDARY_CONSTANT * (1.0 + 1e-9)),
    }
    result.details = {
        "min_y": float(np.min(y)),
        "min_slope_window": float(np.min(window_slope)),
        "max_boundary_ratio": float(np.max(ratio)),
    }
    if not result.passed:
        failed = [name for name, ok in result.checks.items() if not ok]
        logger.warning("[profile] check failed | delta=%g failed=%s", profile.delta, ",".join(failed))
    return result


def smoothness_jumps(profile: BumpProfile) -> list[float]:
    """Largest jump of y, ..., y'''' across the breakpoints; zero for a C^4 profile."""
    eps = 1e-9
    jumps = []
    for x0 in (profile.a, profile.b, 1.0):
        below = profile.derivatives(np.array([x0 - eps]), 4)
        above = profile.derivatives(np.array([x0 + eps]), 4)
        jumps.append(max(float(abs(u[0] - v[0])) for u, v in zip(below, above)))
    return jumps
