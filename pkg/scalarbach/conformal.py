from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Optional, Sequence, Union

import jax.numpy as jnp
import numpy as np

from .chart import ChartPoint, as_point
from .config import ConformalConvention, CurvatureKind
from .curvature import Invariants, bach_from_jet, christoffel_symbols, curvature_bundle, invariants, tensor_norm
from .jets import Derivs, MetricField, ScalarField, ScalarJet, scalar_times_metric
from .utils import (
    FactorNotPositiveError,
    GeometryError,
    InsufficientJetOrderError,
    NotDimensionFourError,
    PsiNotPositiveError,
    relative_residual,
)


logger = logging.getLogger(__name__)

PointLike = Union[ChartPoint, Sequence[float], np.ndarray]


def _require_positive(field: ScalarField, error: type[GeometryError], name: str) -> ScalarField:
    """Wrap a field so that evaluating it at a non-positive value raises `error`."""

    def source(points: np.ndarray, order: int) -> Derivs:
        derivs = field.source(points, order)
        values = np.asarray(derivs[0])
        if np.any(values <= 0):
            raise error(f"{name} must be positive; min value {float(np.min(values)):.3e}")
        return derivs

    return ScalarField(source, label=field.label, fn=field.fn, max_order=field.max_order)


@dataclass
class ConformalFactor:
    """A conformal factor; exponential means e^{2u} g, power means u^2 g."""

    u: ScalarField
    convention: ConformalConvention = ConformalConvention.EXPONENTIAL

    def exponent(self) -> ScalarField:
        """The canonical exponent w with g~ = e^{2w} g."""
        if self.convention == ConformalConvention.EXPONENTIAL:
            return self.u
        return _require_positive(self.u, FactorNotPositiveError, "power-convention factor").log()

    def power_factor(self) -> ScalarField:
        """U = e^w, so that g~ = U^2 g."""
        if self.convention == ConformalConvention.POWER:
            return _require_positive(self.u, FactorNotPositiveError, "power-convention factor")
        return self.u.exp(1.0)


@dataclass
class MixedCurvatureScalar:
    value: float
    t: float
    kind: CurvatureKind
    point: Optional[np.ndarray] = None
    scalar: float = 0.0
    magnitude: float = 0.0


@dataclass
class ConformalLaws:
    """Curvature of g' = psi g at a point."""

    scalar: float
    ricci: np.ndarray
    bach: np.ndarray
    volume_ratio: float
    hess_psi: np.ndarray


def _multiplied(g: MetricField, phi: ScalarField, label: str) -> MetricField:
    def source(points: np.ndarray, order: int) -> Derivs:
        phi_derivs = tuple(jnp.asarray(d) for d in phi.source(points, order))
        g_derivs = tuple(jnp.asarray(d) for d in g.source(points, order))
        return scalar_times_metric(phi_derivs, g_derivs, order)

    metric_fn = None
    if g.metric_fn is not None and phi.fn is not None:
        metric_fn = lambda x: phi.fn(x) * g.metric_fn(x)
    return MetricField(source, label=label, provenance=g.provenance, domain=g.domain, metric_fn=metric_fn,
                       max_order=min(g.max_order, phi.max_order))


def scaled_metric(g: MetricField, psi: ScalarField) -> MetricField:
    """The metric psi * g for a positive function psi."""
    return _multiplied(g, _require_positive(psi, PsiNotPositiveError, "psi"), f"({psi.label})*{g.label}")


def conformal_metric(g: MetricField, c: ConformalFactor) -> MetricField:
    """g~ = e^{2w} g with jets propagated exactly through the product rule."""
    multiplier = c.exponent().exp(2.0)
    return _multiplied(g, multiplier, f"conf[{c.u.label}]*{g.label}")


# ---------------------------------------------------------------------------
# Pointwise evaluation
# ---------------------------------------------------------------------------


def _four(g: MetricField) -> None:
    if g.dimension != 4:
        raise NotDimensionFourError("conformal laws are implemented in dimension 4")


def _covariant_hessian(g: np.ndarray, dg: np.ndarray, phi: ScalarJet) -> np.ndarray:
    gamma = christoffel_symbols(np.asarray(g), np.asarray(dg))
    return np.asarray(phi.hess) - np.einsum("...kij,...k->...ij", gamma, np.asarray(phi.grad))


def laplacian_at(g: MetricField, phi: ScalarField, p: PointLike) -> float:
    point = as_point(p)
    jet = g.jet(point, 1)
    phi_jet = phi.jet(point, 2)
    if phi_jet.order < 2:
        raise InsufficientJetOrderError("the Laplacian needs second derivatives")
    hess = _covariant_hessian(jet.g, jet.dg, phi_jet)
    return float(np.einsum("ij,ij->", np.linalg.inv(np.asarray(jet.g)), hess))


def mixed_values(inv: Invariants, t: float, kind: CurvatureKind = CurvatureKind.SCALAR_BACH) -> np.ndarray:
    """S + t |B|^{1/2} (scalar-bach) or S + t |W| (scalar-weyl) from precomputed invariants."""
    if kind == CurvatureKind.SCALAR_WEYL:
        return inv.scalar + t * inv.weyl_norm
    return inv.scalar + t * np.sqrt(inv.bach_norm)


def mixed_curvature(
    g: MetricField, p: PointLike, t: float, kind: CurvatureKind = CurvatureKind.SCALAR_BACH
) -> MixedCurvatureScalar:
    _four(g)
    point = as_point(p)
    inv = invariants(g, point.coords[None, :], bach=kind == CurvatureKind.SCALAR_BACH)
    magnitude = float(np.sqrt(inv.bach_norm[0]) if kind == CurvatureKind.SCALAR_BACH else inv.weyl_norm[0])
    return MixedCurvatureScalar(
        value=float(mixed_values(inv, t, kind)[0]),
        t=float(t),
        kind=kind,
        point=point.coords,
        scalar=float(inv.scalar[0]),
        magnitude=magnitude,
    )


def scalar_bach(g: MetricField, p: PointLike, t: float) -> MixedCurvatureScalar:
    """F^B = S + t |B|_g^{1/2}; continuous but not smooth where B = 0."""
    return mixed_curvature(g, p, t, CurvatureKind.SCALAR_BACH)


def scalar_weyl(g: MetricField, p: PointLike, t: float) -> MixedCurvatureScalar:
    """F = S + t |W|_g."""
    return mixed_curvature(g, p, t, CurvatureKind.SCALAR_WEYL)


def modified_laplacian_apply(
    g: MetricField,
    t: float,
    phi: ScalarField,
    p: PointLike,
    *,
    kind: CurvatureKind = CurvatureKind.SCALAR_BACH,
) -> float:
    """-6 Delta_g phi + F_g phi at p."""
    point = as_point(p)
    potential = mixed_curvature(g, point, t, kind).value
    value = float(phi.jet(point, 0).value)
    return -6.0 * laplacian_at(g, phi, point) + potential * value


# ---------------------------------------------------------------------------
# Closed-form laws and covariance residuals
# ---------------------------------------------------------------------------


def conformal_curvature_laws(g: MetricField, psi: ScalarField, p: PointLike) -> ConformalLaws:
    """Curvature of g' = psi g from the curvature of g and the 2-jet of psi."""
    _four(g)
    point = as_point(p)
    psi_jet = psi.jet(point, 2)
    value = float(psi_jet.value)
    if value <= 0:
        raise PsiNotPositiveError(f"psi must be positive at {point.coords.tolist()}")
    jet = g.jet(point, 4)
    base = curvature_bundle(jet)
    metric = np.asarray(jet.g)
    ginv = np.linalg.inv(metric)
    dpsi = np.asarray(psi_jet.grad)
    hess = _covariant_hessian(jet.g, jet.dg, psi_jet)
    lap = float(np.einsum("ij,ij->", ginv, hess))
    a = float(dpsi @ ginv @ dpsi)
    outer = np.outer(dpsi, dpsi)
    return ConformalLaws(
        scalar=(base.scalar - 3.0 * lap / value + 1.5 * a / value ** 2) / value,
        ricci=base.ricci - hess / value + 1.5 * outer / value ** 2 - 0.5 * lap / value * metric,
        bach=bach_from_jet(jet) / value,
        volume_ratio=value ** 2,
        hess_psi=hess - outer / value + 0.5 * a / value * metric,
    )


def direct_conformal_curvature(g: MetricField, psi: ScalarField, p: PointLike) -> ConformalLaws:
    """The same quantities computed head-on from the jets of psi g."""
    point = as_point(p)
    primed = scaled_metric(g, psi)
    jet = primed.jet(point, 4)
    bundle = curvature_bundle(jet)
    base_g = np.asarray(g.jet(point, 0).g)
    hess = _covariant_hessian(jet.g, jet.dg, psi.jet(point, 2))
    return ConformalLaws(
        scalar=bundle.scalar,
        ricci=bundle.ricci,
        bach=bach_from_jet(jet),
        volume_ratio=float(np.sqrt(np.linalg.det(np.asarray(jet.g)) / np.linalg.det(base_g))),
        hess_psi=hess,
    )


def conformal_laws_residual(g: MetricField, psi: ScalarField, p: PointLike) -> dict[str, float]:
    """Relative mismatch between the closed-form laws and direct computation, per quantity."""
    closed = conformal_curvature_laws(g, psi, p)
    direct = direct_conformal_curvature(g, psi, p)
    return {
        "scalar": relative_residual(closed.scalar, direct.scalar),
        "ricci": relative_residual(closed.ricci, direct.ricci),
        "bach": relative_residual(closed.bach, direct.bach),
        "volume_ratio": relative_residual(closed.volume_ratio, direct.volume_ratio),
        "hess_psi": relative_residual(closed.hess_psi, direct.hess_psi),
    }


def covariance_residual(
    g: MetricField,
    c: ConformalFactor,
    t: float,
    phi: ScalarField,
    p: PointLike,
    *,
    kind: CurvatureKind = CurvatureKind.SCALAR_BACH,
) -> float:
    """Residual of L_{g~} phi = U^-3 L_g(phi U) and F_{g~} = U^-3 L_g U with g~ = U^2 g."""
    _four(g)
    point = as_point(p)
    tilde = conformal_metric(g, c)
    factor = c.power_factor()
    u_value = float(factor.jet(point, 0).value)

    lhs_phi = modified_laplacian_apply(tilde, t, phi, point, kind=kind)
    base_phi = modified_laplacian_apply(g, t, phi.times(factor), point, kind=kind)
    lhs_f = mixed_curvature(tilde, point, t, kind).value
    base_f = modified_laplacian_apply(g, t, factor, point, kind=kind)

    residual = max(
        abs(lhs_phi - base_phi / u_value ** 3) / (1.0 + abs(base_phi)),
        abs(lhs_f - base_f / u_value ** 3) / (1.0 + abs(base_f)),
    )
    logger.info("[conformal] covariance | kind=%s t=%g residual=%.3e", kind.value, t, residual)
    return residual


def bach_covariance_residual(g: MetricField, c: ConformalFactor, p: PointLike) -> float:
    """max of |B~ - e^{-2w} B| and |U^8 |B~|^2 - |B|^2|, each relative to the reference side."""
    _four(g)
    point = as_point(p)
    tilde = conformal_metric(g, c)
    w = float(c.exponent().jet(point, 0).value)
    jet = g.jet(point, 4)
    tilde_jet = tilde.jet(point, 4)
    bach = bach_from_jet(jet)
    bach_tilde = bach_from_jet(tilde_jet)
    expected = np.exp(-2.0 * w) * bach
    component = relative_residual(bach_tilde, expected)
    norm_sq = tensor_norm(bach, jet) ** 2
    norm_tilde_sq = tensor_norm(bach_tilde, tilde_jet) ** 2
    norm_law = abs(np.exp(8.0 * w) * norm_tilde_sq - norm_sq) / (1.0 + norm_sq)
    residual = float(max(component, norm_law))
    logger.info("[conformal] bach covariance | residual=%.3e", residual)
    return residual
