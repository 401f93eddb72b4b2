from __future__ import annotations

import math
from typing import Any, Iterable, Optional

import numpy as np


class GeometryError(RuntimeError):
    """Base class for domain failures; `code` is the stable identifier written to reports."""

    code = "geometry-error"

    def __init__(self, message: str, *, report: Optional[Any] = None) -> None:
        super().__init__(message)
        self.report = report


class HypothesisError(GeometryError):
    """A mathematical hypothesis does not hold for the input; maps to exit status 2."""

    code = "hypothesis-failed"


class InvalidSpecError(GeometryError):
    """Raised for malformed chart, grid, field or parameter specs."""
    code = "invalid-spec"


class PointOutsideChartError(GeometryError):
    code = "point-outside-chart"


class JetInconsistentError(GeometryError):
    """Raised when two step sizes of a finite-difference jet disagree."""
    code = "jet-inconsistent"


class PDViolationError(GeometryError):
    code = "pd-violation"


class NonFiniteFieldValueError(GeometryError):
    code = "non-finite-field-value"


class InsufficientJetOrderError(GeometryError):
    code = "insufficient-jet-order"


class NotDimensionFourError(GeometryError):
    code = "not-dimension-4"


class RankMismatchError(GeometryError):
    code = "rank-mismatch"


class NonPeriodicGridError(GeometryError):
    code = "non-periodic-grid"


class PsiNotPositiveError(GeometryError):
    code = "psi-not-positive"


class FactorNotPositiveError(GeometryError):
    code = "factor-not-positive"


class NoConvergenceError(GeometryError):
    code = "no-convergence"


class ZeroDenominatorError(GeometryError):
    code = "zero-denominator"


class DescentStalledError(GeometryError):
    code = "descent-stalled"


class PositivityLostError(GeometryError):
    code = "positivity-lost"


class InfeasibleDeltaError(GeometryError):
    """Raised when the bump floor is too high for the slope constraint."""

    code = "infeasible-delta"

    def __init__(self, message: str, *, delta_max: float) -> None:
        super().__init__(message)
        self.delta_max = delta_max


class RouteMismatchError(GeometryError):
    """Raised when the two constructions of a doubly deformed metric disagree."""
    code = "route-mismatch"


class QuadratureOverflowError(GeometryError):
    code = "quadrature-overflow"


class PhiUnresolvedError(GeometryError):
    """Raised when the formula and direct values of Phi disagree beyond phi_tol."""
    code = "phi-unresolved"


class ConfigParseError(GeometryError):
    code = "config-parse-error"


class UnknownMetricError(GeometryError):
    code = "unknown-metric"


class VerificationFailedError(GeometryError):
    """Raised when a verification suite has a check above its tolerance."""
    code = "verification-failed"


class BachVanishesError(HypothesisError):
    code = "bach-vanishes"


class BachDegenerateError(HypothesisError):
    code = "bach-degenerate"


class PhiNotNegativeError(HypothesisError):
    code = "phi-not-negative"


class AllCandidatesDegenerateError(HypothesisError):
    code = "all-candidates-degenerate"


def compensated_sum(values: Iterable[float]) -> float:
    """Order-fixed, error-free summation of a flat sequence."""
    arr = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteFieldValueError("summand is not finite")
    return math.fsum(arr.tolist())


def relative_residual(actual: Any, expected: Any) -> float:
    """max|actual - expected| / (1 + max|expected|)."""
    a = np.asarray(actual, dtype=float)
    e = np.asarray(expected, dtype=float)
    scale = 1.0 + (float(np.max(np.abs(e))) if e.size else 0.0)
    return float(np.max(np.abs(a - e))) / scale if a.size else 0.0


def parse_floats(raw: str, *, name: str) -> list[float]:
    """Parse "0,0.5,1" style lists from the command line."""
    try:
        return [float(part) for part in raw.replace(" ", "").split(",") if part]
    except ValueError as exc:
        raise InvalidSpecError(f"{name} must be a comma separated list of numbers") from exc
