from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Optional, Sequence, Union

import jax
import jax.numpy as jnp
import numpy as np

from .chart import ChartGrid, ChartPoint, as_point, integrate
from .conformal import scaled_metric
from .curvature import bach_from_jet, christoffel_symbols, curvature_bundle, invariants, tensor_norm
from .jets import Derivs, MetricField, ScalarField, ScalarJet, add_derivs, gradient_square, scale_derivs
from .utils import (
    InsufficientJetOrderError,
    InvalidSpecError,
    NonPeriodicGridError,
    PsiNotPositiveError,
    relative_residual,
)


logger = logging.getLogger(__name__)

PointLike = Union[ChartPoint, Sequence[float], np.ndarray]


@dataclass
class DeformationSpec:
    """Deforming function f and scale k; the metric becomes g + d(kf) (x) d(kf)."""

    f: ScalarField
    k: float = 1.0
    label: str = ""

    def __post_init__(self) -> None:
        if self.k < 0:
            raise InvalidSpecError("k must be >= 0")
        if not self.label:
            self.label = f"{self.k:g}*{self.f.label}"

    def scaled_jets(self, points: np.ndarray, order: int) -> ScalarJet:
        jet = self.f.jets(points, order)
        return ScalarJet.from_derivs(scale_derivs(jet.derivs, self.k))


@dataclass
class DeformedCurvature:
    """Closed-form curvature of g + df (x) df at a point and its correction tensors."""

    gamma_closed: np.ndarray
    riemann_closed: np.ndarray
    ricci_closed: np.ndarray
    scalar_closed: float
    ER: np.ndarray
    F: np.ndarray
    H: float
    G: np.ndarray
    inv_bar: np.ndarray
    vol_ratio: float
    point: Optional[np.ndarray] = None


@dataclass
class AubinTerms:
    """Gradient and Hessian contractions of f at a batch of points."""

    w: np.ndarray
    df: np.ndarray
    df_up: np.ndarray
    hess: np.ndarray
    lap: np.ndarray
    hess_sq: np.ndarray
    h2: np.ndarray
    v: np.ndarray
    v_sq: np.ndarray
    ric_ff: np.ndarray


@dataclass
class NormDomination:
    rank: int
    samples: int
    max_ratio: float


@dataclass
class AubinIntegral:
    condition: float
    head_on: float

    @property
    def residual(self) -> float:
        return abs(self.condition - self.head_on) / (1.0 + abs(self.head_on))


def deform_metric(g: MetricField, spec: DeformationSpec) -> MetricField:
    """g_ij + f_i f_j with jets through the product rule (f needs one order more)."""

    def source(points: np.ndarray, order: int) -> Derivs:
        if order + 1 > spec.f.max_order:
            raise InsufficientJetOrderError(f"deformed jets of order {order} need f to order {order + 1}")
        f_derivs = scale_derivs(tuple(jnp.asarray(d) for d in spec.f.source(points, order + 1)), spec.k)
        g_derivs = tuple(jnp.asarray(d) for d in g.source(points, order))
        return add_derivs(g_derivs, gradient_square(f_derivs, order))

    metric_fn = None
    if g.metric_fn is not None and spec.f.fn is not None:
        grad = jax.grad(spec.f.fn)

        def metric_fn(x):
            df = spec.k * grad(x)
            return g.metric_fn(x) + jnp.outer(df, df)

    return MetricField(
        source,
        label=f"aubin[{spec.label}]*{g.label}",
        provenance=g.provenance,
        domain=g.domain,
        metric_fn=metric_fn,
        max_order=min(g.max_order, spec.f.max_order - 1),
    )


def aubin_conformal_metric(g: MetricField, spec: DeformationSpec) -> MetricField:
    """(1 + |df|^2)^{-1/2} (g + df (x) df) as a closed form differentiated head-on."""
    if g.metric_fn is None or spec.f.fn is None:
        raise InvalidSpecError("aubin_conformal_metric needs closed forms for g and f")
    grad = jax.grad(spec.f.fn)

    def metric(x):
        base = g.metric_fn(x)
        df = spec.k * grad(x)
        w = 1.0 + df @ jnp.linalg.solve(base, df)
        return (base + jnp.outer(df, df)) / jnp.sqrt(w)

    return MetricField.from_closed_form(
        metric, label=f"w^-1/2 aubin[{spec.label}]*{g.label}", domain=g.domain, provenance=g.provenance
    )


def aubin_terms(g: np.ndarray, dg: np.ndarray, ricci: np.ndarray, jet_f: ScalarJet) -> AubinTerms:
    """Batched contractions entering the closed-form curvature; arrays carry a leading batch axis."""
    ginv = np.linalg.inv(g)
    df = np.asarray(jet_f.grad)
    gamma = christoffel_symbols(g, dg)
    hess = np.asarray(jet_f.hess) - np.einsum("nkij,nk->nij", gamma, df)
    df_up = np.einsum("nij,nj->ni", ginv, df)
    mixed = np.einsum("nik,nkj->nij", ginv, hess)
    v = np.einsum("nij,nj->ni", hess, df_up)
    return AubinTerms(
        w=1.0 + np.einsum("ni,ni->n", df, df_up),
        df=df,
        df_up=df_up,
        hess=hess,
        lap=np.einsum("nii->n", mixed),
        hess_sq=np.einsum("nij,nji->n", mixed, mixed),
        h2=np.einsum("ni,ni->n", v, df_up),
        v=v,
        v_sq=np.einsum("ni,nij,nj->n", v, ginv, v),
        ric_ff=np.einsum("ni,nij,nj->n", df_up, ricci, df_up),
    )


def closed_scalar(scalar: np.ndarray, terms: AubinTerms) -> np.ndarray:
    w = terms.w
    return (
        scalar
        - 2.0 * terms.ric_ff / w
        + (terms.lap ** 2 - terms.hess_sq) / w
        - 2.0 * (terms.lap * terms.h2 - terms.v_sq) / w ** 2
    )


def deformed_inverse_and_volume(jet_g, jet_f: ScalarJet) -> tuple[np.ndarray, float]:
    """Inverse of g + df (x) df and the volume ratio (1 + |df|^2)^{1/2}."""
    g = np.asarray(jet_g.g if hasattr(jet_g, "g") else jet_g, dtype=float)
    df = np.asarray(jet_f.grad, dtype=float)
    ginv = np.linalg.inv(g)
    df_up = ginv @ df
    w = 1.0 + float(df @ df_up)
    inv_bar = ginv - np.outer(df_up, df_up) / w
    check = relative_residual(inv_bar @ (g + np.outer(df, df)), np.eye(g.shape[0]))
    if check > 1e-12 * w:
        logger.warning("[aubin] inverse check | residual=%.3e", check)
    return inv_bar, float(np.sqrt(w))


def deformed_curvature_closed(g: MetricField, spec: DeformationSpec, p: PointLike) -> DeformedCurvature:
    point = as_point(p)
    jet = g.jet(point, 2)
    jet_f = spec.scaled_jets(point.coords[None, :], 2)
    base = curvature_bundle(jet)
    metric = np.asarray(jet.g)
    terms = aubin_terms(metric[None], np.asarray(jet.dg)[None], base.ricci[None], jet_f)
    inv_bar, vol_ratio = deformed_inverse_and_volume(jet, jet_f.take(0))

    w = float(terms.w[0])
    df_up = terms.df_up[0]
    hess = terms.hess[0]
    v = terms.v[0]
    lap, h2 = float(terms.lap[0]), float(terms.h2[0])
    hess_sq_tensor = hess @ np.linalg.inv(metric) @ hess

    G = np.einsum("k,ij->kij", df_up, hess) / w
    ER = (np.einsum("ik,jl->ijkl", hess, hess) - np.einsum("il,jk->ijkl", hess, hess)) / w
    riemann_ff = np.einsum("i,l,ijlt->jt", df_up, df_up, base.riemann)
    F = (
        -riemann_ff / w
        + (lap * hess - hess_sq_tensor) / w
        - (h2 * hess - np.outer(v, v)) / w ** 2
    )
    scalar_closed = float(closed_scalar(np.array([base.scalar]), terms)[0])
    return DeformedCurvature(
        gamma_closed=base.gamma + G,
        riemann_closed=base.riemann + ER,
        ricci_closed=base.ricci + F,
        scalar_closed=scalar_closed,
        ER=ER,
        F=F,
        H=scalar_closed - base.scalar,
        G=G,
        inv_bar=inv_bar,
        vol_ratio=vol_ratio,
        point=point.coords,
    )


def bach_error(g: MetricField, spec: DeformationSpec, p: PointLike) -> np.ndarray:
    """E(f) = B(g + df (x) df) - B(g) at p."""
    point = as_point(p)
    deformed = deform_metric(g, spec)
    return bach_from_jet(deformed.jet(point, 4)) - bach_from_jet(g.jet(point, 4))


def conformal_error_scaling_check(g: MetricField, psi: ScalarField, k: float, p: PointLike) -> float:
    """Relative mismatch of E_{psi g}(k psi) against E_g(2k sqrt(psi)) / psi."""
    point = as_point(p)
    value = float(psi.jet(point, 0).value)
    if value <= 0:
        raise PsiNotPositiveError(f"psi must be positive at {point.coords.tolist()}")
    primed = scaled_metric(g, psi)
    lhs = bach_error(primed, DeformationSpec(psi, k), point)
    rhs = bach_error(g, DeformationSpec(psi.sqrt(), 2.0 * k), point) / value
    residual = relative_residual(lhs, rhs)
    logger.info("[aubin] error scaling | k=%g residual=%.3e", k, residual)
    return residual


def _require_periodic(grid: ChartGrid) -> None:
    if not grid.periodic:
        raise NonPeriodicGridError("integral identities need a closed (periodic) grid")


def _grid_terms(g: MetricField, spec: DeformationSpec, grid: ChartGrid):
    inv = invariants(g, grid.nodes, bach=False)
    jet = g.jets(grid.nodes, 1)
    jet_f = spec.scaled_jets(g.domain.locate(grid.nodes), 2)
    terms = aubin_terms(np.asarray(jet.g), np.asarray(jet.dg), inv.ricci, jet_f)
    return inv, terms


def scalar_integral_identity(g: MetricField, spec: DeformationSpec, grid: ChartGrid) -> tuple[float, float]:
    """int S(g + df df) dV_g against int S dV_g - int Ric(df, df) / (1 + |df|^2) dV_g."""
    _require_periodic(grid)
    inv, terms = _grid_terms(g, spec, grid)
    deformed = invariants(deform_metric(g, spec), grid.nodes, bach=False)
    lhs = integrate(deformed.scalar, grid, g, sqrt_det=inv.sqrt_det)
    rhs = integrate(inv.scalar, grid, g, sqrt_det=inv.sqrt_det) - integrate(
        terms.ric_ff / terms.w, grid, g, sqrt_det=inv.sqrt_det
    )
    logger.info("[aubin] scalar identity | lhs=%.10e rhs=%.10e", lhs, rhs)
    return lhs, rhs


def aubin_integral_condition(g: MetricField, spec: DeformationSpec, grid: ChartGrid, t: float) -> AubinIntegral:
    """Closed-form integral for int F^B dV of w^{-1/2}(g + df df), and the head-on value."""
    _require_periodic(grid)
    with_bach = t != 0
    inv, terms = _grid_terms(g, spec, grid)
    w = terms.w
    integrand = inv.scalar - terms.ric_ff / w + 1.5 * (terms.v_sq / w ** 2 - terms.h2 ** 2 / w ** 3)
    if with_bach:
        deformed = invariants(deform_metric(g, spec), grid.nodes, bach=True)
        integrand = integrand + t * np.sqrt(deformed.bach_norm)
    condition = integrate(integrand, grid, g, sqrt_det=inv.sqrt_det)

    tilde = invariants(aubin_conformal_metric(g, spec), grid.nodes, bach=with_bach)
    f_tilde = tilde.scalar + (t * np.sqrt(tilde.bach_norm) if with_bach else 0.0)
    head_on = integrate(f_tilde, grid, g, sqrt_det=tilde.sqrt_det)
    logger.info("[aubin] integral condition | t=%g condition=%.8e head_on=%.8e", t, condition, head_on)
    return AubinIntegral(condition=condition, head_on=head_on)


def norm_domination(
    jet_g,
    jet_f: ScalarJet,
    *,
    rank: int = 2,
    samples: int = 50,
    rng: Optional[np.random.Generator] = None,
) -> NormDomination:
    """Largest |T|_{g + df df} / |T|_g over random covariant tensors of a given rank."""
    if rank < 1:
        raise InvalidSpecError("rank must be >= 1")
    rng = rng or np.random.default_rng(0)
    g = np.asarray(jet_g.g if hasattr(jet_g, "g") else jet_g, dtype=float)
    df = np.asarray(jet_f.grad, dtype=float)
    g_bar = g + np.outer(df, df)
    d = g.shape[0]
    worst = 0.0
    for _ in range(samples):
        tensor = rng.standard_normal((d,) * rank)
        worst = max(worst, tensor_norm(tensor, g_bar) / tensor_norm(tensor, g))
    return NormDomination(rank=rank, samples=samples, max_ratio=worst)
