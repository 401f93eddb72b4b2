from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Callable, Optional, Sequence, Union

import jax
import jax.numpy as jnp
import numpy as np

from .chart import ChartGrid, ChartPoint, as_point, periodic_derivative
from .config import BachFormula, get_config
from .jets import MetricField, MetricJet
from .utils import InsufficientJetOrderError, NonPeriodicGridError, NotDimensionFourError, RankMismatchError


logger = logging.getLogger(__name__)


@dataclass
class CurvatureBundle:
    """Pointwise curvature. riemann is R_ijkl with R_ijij > 0 on spheres; ricci_jl = g^{ik} R_ijkl."""

    gamma: np.ndarray
    dgamma: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: float
    weyl: np.ndarray
    point: Optional[np.ndarray] = None


@dataclass
class BachValue:
    b: np.ndarray
    formula: BachFormula
    point: Optional[np.ndarray] = None


@dataclass
class Invariants:
    """Curvature scalars and tensors at a batch of points."""

    g: np.ndarray
    ginv: np.ndarray
    sqrt_det: np.ndarray
    scalar: np.ndarray
    ricci: np.ndarray
    weyl_norm: np.ndarray
    bach: Optional[np.ndarray] = None
    bach_norm: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.scalar.shape[0])


# ---------------------------------------------------------------------------
# Differential building blocks. Every function of `x` below is a function of
# the displacement from the jet's base point.
# ---------------------------------------------------------------------------


def taylor_metric(jet: MetricJet) -> Callable:
    """Taylor polynomial of the metric built from its jet; exact derivatives at 0."""
    derivs = jet.derivs

    def metric(delta):
        total = derivs[0]
        for m in range(1, len(derivs)):
            term = derivs[m]
            for _ in range(m):
                term = term @ delta
            total = total + term / math.factorial(m)
        return total

    return metric


def christoffel_fn(metric: Callable) -> Callable:
    dmetric = jax.jacfwd(metric)

    def gamma(x):
        g = metric(x)
        dg = dmetric(x)
        lower = 0.5 * (jnp.einsum("jli->lij", dg) + jnp.einsum("ilj->lij", dg) - jnp.einsum("ijl->lij", dg))
        return jnp.einsum("kl,lij->kij", jnp.linalg.inv(g), lower)

    return gamma


def christoffel_symbols(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Gamma^k_ij from g and dg[..., i, j, a] = d_a g_ij, with any leading batch axes."""
    lower = 0.5 * (
        np.einsum("...jli->...lij", dg) + np.einsum("...ilj->...lij", dg) - np.einsum("...ijl->...lij", dg)
    )
    return np.einsum("...kl,...lij->...kij", np.linalg.inv(g), lower)


def riemann_endomorphism(gamma: jnp.ndarray, dgamma: jnp.ndarray) -> jnp.ndarray:
    """R^m_{ijl}, the m-component of R(d_i, d_j) d_l; dgamma[m,j,l,i] = d_i Gamma^m_jl."""
    return (
        jnp.einsum("mjli->mijl", dgamma)
        - jnp.einsum("milj->mijl", dgamma)
        + jnp.einsum("mip,pjl->mijl", gamma, gamma)
        - jnp.einsum("mjp,pil->mijl", gamma, gamma)
    )


def kulkarni_nomizu(h: jnp.ndarray, k: jnp.ndarray) -> jnp.ndarray:
    return (
        jnp.einsum("ik,jl->ijkl", h, k)
        + jnp.einsum("jl,ik->ijkl", h, k)
        - jnp.einsum("il,jk->ijkl", h, k)
        - jnp.einsum("jk,il->ijkl", h, k)
    )


def weyl_from(riemann: jnp.ndarray, ricci: jnp.ndarray, scalar: jnp.ndarray, g: jnp.ndarray) -> jnp.ndarray:
    n = g.shape[-1]
    if n < 3:
        return jnp.zeros_like(riemann)
    return (
        riemann
        - kulkarni_nomizu(ricci, g) / (n - 2)
        + scalar * kulkarni_nomizu(g, g) / (2 * (n - 1) * (n - 2))
    )


def reconstruct_riemann(weyl: np.ndarray, ricci: np.ndarray, scalar: float, g: np.ndarray) -> np.ndarray:
    n = g.shape[-1]
    return np.asarray(
        weyl + kulkarni_nomizu(ricci, g) / (n - 2) - scalar * kulkarni_nomizu(g, g) / (2 * (n - 1) * (n - 2))
    )


class _Geometry:
    """Levi-Civita calculus for a metric given as a function of the displacement."""

    def __init__(self, metric: Callable) -> None:
        self.metric = metric
        self.gamma = christoffel_fn(metric)
        self.dgamma = jax.jacfwd(self.gamma)

    def inverse(self, x):
        return jnp.linalg.inv(self.metric(x))

    def endomorphism(self, x):
        return riemann_endomorphism(self.gamma(x), self.dgamma(x))

    def riemann(self, x):
        return jnp.einsum("km,mijl->ijkl", self.metric(x), self.endomorphism(x))

    def ricci(self, x):
        return jnp.einsum("iijl->jl", self.endomorphism(x))

    def scalar(self, x):
        return jnp.einsum("jl,jl->", self.inverse(x), self.ricci(x))

    def weyl(self, x):
        return weyl_from(self.riemann(x), self.ricci(x), self.scalar(x), self.metric(x))

    def nabla(self, tensor: Callable) -> Callable:
        """Covariant derivative of a covariant tensor field; new index last."""
        dtensor = jax.jacfwd(tensor)
        gamma = self.gamma

        def covariant(x):
            t = tensor(x)
            out = dtensor(x)
            connection = gamma(x)
            for slot in range(t.ndim):
                correction = jnp.tensordot(t, connection, axes=([slot], [0]))
                out = out - jnp.moveaxis(correction, -2, slot)
            return out

        return covariant


def _origin(jet: MetricJet) -> jnp.ndarray:
    return jnp.zeros(jet.g.shape[-1], dtype=jet.g.dtype)


def _christoffel_kernel(jet: MetricJet):
    geo = _Geometry(taylor_metric(jet))
    x0 = _origin(jet)
    return geo.gamma(x0), geo.dgamma(x0)


def _bundle_kernel(jet: MetricJet):
    geo = _Geometry(taylor_metric(jet))
    x0 = _origin(jet)
    return {
        "gamma": geo.gamma(x0),
        "dgamma": geo.dgamma(x0),
        "riemann": geo.riemann(x0),
        "ricci": geo.ricci(x0),
        "scalar": geo.scalar(x0),
        "weyl": geo.weyl(x0),
    }


def _bach_ricci(geo: _Geometry, x0) -> jnp.ndarray:
    g = geo.metric(x0)
    ginv = jnp.linalg.inv(g)
    rm = geo.riemann(x0)
    ric = geo.ricci(x0)
    s = geo.scalar(x0)
    dd_ric = geo.nabla(geo.nabla(geo.ricci))(x0)
    hess_s = geo.nabla(geo.nabla(geo.scalar))(x0)
    lap_ric = jnp.einsum("mn,ijmn->ij", ginv, dd_ric)
    lap_s = jnp.einsum("mn,mn->", ginv, hess_s)
    ric_up = ginv @ ric @ ginv
    ric_sq = jnp.einsum("ij,ij->", ric_up, ric)
    bach = 0.5 * (
        lap_ric
        - hess_s / 3.0
        + 2.0 * jnp.einsum("kl,ikjl->ij", ric_up, rm)
        - (2.0 / 3.0) * s * ric
        - lap_s * g / 6.0
        - 0.5 * (ric_sq - s ** 2 / 3.0) * g
    )
    return 0.5 * (bach + bach.T)


def _bach_ricci_kernel(jet: MetricJet):
    geo = _Geometry(taylor_metric(jet))
    return _bach_ricci(geo, _origin(jet))


def _bach_weyl_kernel(jet: MetricJet):
    geo = _Geometry(taylor_metric(jet))
    x0 = _origin(jet)
    ginv = geo.inverse(x0)
    dd_weyl = geo.nabla(geo.nabla(geo.weyl))(x0)
    divergence = jnp.einsum("lm,kn,ikjlmn->ij", ginv, ginv, dd_weyl)
    ric_up = ginv @ geo.ricci(x0) @ ginv
    bach = divergence + 0.5 * jnp.einsum("kl,ikjl->ij", ric_up, geo.weyl(x0))
    return 0.5 * (bach + bach.T)


def _invariants_kernel(jet: MetricJet, with_bach: bool):
    geo = _Geometry(taylor_metric(jet))
    x0 = _origin(jet)
    g = geo.metric(x0)
    ginv = jnp.linalg.inv(g)
    out = {
        "g": g,
        "ginv": ginv,
        "sqrt_det": jnp.sqrt(jnp.linalg.det(g)),
        "scalar": geo.scalar(x0),
        "ricci": geo.ricci(x0),
        "weyl_norm": _norm(geo.weyl(x0), ginv),
    }
    if with_bach:
        bach = _bach_ricci(geo, x0)
        out["bach"] = bach
        out["bach_norm"] = _norm(bach, ginv)
    return out


def _norm(t: jnp.ndarray, ginv: jnp.ndarray) -> jnp.ndarray:
    raised = t
    for axis in range(t.ndim):
        raised = jnp.moveaxis(jnp.tensordot(ginv, raised, axes=([1], [axis])), 0, axis)
    return jnp.sqrt(jnp.maximum(jnp.sum(t * raised), 0.0))


_SINGLE: dict = {}
_BATCHED: dict = {}


def _single(kernel: Callable) -> Callable:
    if kernel not in _SINGLE:
        _SINGLE[kernel] = jax.jit(kernel)
    return _SINGLE[kernel]


def _batched(kernel: Callable) -> Callable:
    if kernel not in _BATCHED:
        _BATCHED[kernel] = jax.jit(jax.vmap(kernel))
    return _BATCHED[kernel]


def _invariants_with_bach(jet: MetricJet):
    return _invariants_kernel(jet, True)


def _invariants_without_bach(jet: MetricJet):
    return _invariants_kernel(jet, False)


def map_field(field: MetricField, points: np.ndarray, kernel: Callable, order: int) -> dict:
    """Apply a jet kernel at every point in fixed-size chunks; outputs keep point order."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    chunk = get_config().chunk_size
    batched = _batched(kernel)
    parts = []
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        pad = chunk - block.shape[0] if pts.shape[0] > chunk else 0
        if pad:
            block = np.concatenate([block, np.repeat(block[-1:], pad, axis=0)])
        jets = field.jets(block, order)
        out = jax.tree_util.tree_map(lambda a: np.asarray(a)[: block.shape[0] - pad], batched(jets))
        parts.append(out)
    return jax.tree_util.tree_map(lambda *xs: np.concatenate(xs), *parts)


def _require_order(jet: MetricJet, order: int) -> None:
    if jet.order < order:
        raise InsufficientJetOrderError(f"need a jet of order {order}, got {jet.order}")


def _require_dimension_four(field_or_jet: Union[MetricField, MetricJet]) -> None:
    if field_or_jet.dimension != 4:
        raise NotDimensionFourError("Bach operations are defined in dimension 4 only")


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def christoffel(jet: MetricJet) -> tuple[np.ndarray, np.ndarray]:
    """Gamma^k_ij and its partials dgamma[k,i,j,a] = d_a Gamma^k_ij."""
    _require_order(jet, 2)
    gamma, dgamma = _single(_christoffel_kernel)(jet.truncated(2).stripped())
    return np.asarray(gamma), np.asarray(dgamma)


def curvature_bundle(jet: MetricJet) -> CurvatureBundle:
    _require_order(jet, 2)
    out = _single(_bundle_kernel)(jet.truncated(2).stripped())
    return CurvatureBundle(
        gamma=np.asarray(out["gamma"]),
        dgamma=np.asarray(out["dgamma"]),
        riemann=np.asarray(out["riemann"]),
        ricci=np.asarray(out["ricci"]),
        scalar=float(out["scalar"]),
        weyl=np.asarray(out["weyl"]),
        point=jet.point,
    )


def bach_from_jet(jet: MetricJet, formula: BachFormula = BachFormula.RICCI) -> np.ndarray:
    _require_dimension_four(jet)
    _require_order(jet, 4)
    kernel = _bach_weyl_kernel if formula == BachFormula.WEYL else _bach_ricci_kernel
    return np.asarray(_single(kernel)(jet.truncated(4).stripped()))


def bach_ricci_form(field: MetricField, p: Union[ChartPoint, Sequence[float]]) -> BachValue:
    """Bach tensor from Ricci, its Laplacian and the Hessian of S."""
    _require_dimension_four(field)
    point = as_point(p)
    jet = field.jet(point, 4)
    return BachValue(b=bach_from_jet(jet, BachFormula.RICCI), formula=BachFormula.RICCI, point=point.coords)


def bach_weyl_form(field: MetricField, p: Union[ChartPoint, Sequence[float]]) -> BachValue:
    """Bach tensor as the double divergence of Weyl plus the Ricci-Weyl contraction."""
    _require_dimension_four(field)
    point = as_point(p)
    jet = field.jet(point, 4)
    return BachValue(b=bach_from_jet(jet, BachFormula.WEYL), formula=BachFormula.WEYL, point=point.coords)


def tensor_norm(t: np.ndarray, jet: Union[MetricJet, np.ndarray]) -> float:
    """g-norm of a covariant tensor with every index raised."""
    g = np.asarray(jet.g if isinstance(jet, MetricJet) else jet)
    t = np.asarray(t, dtype=float)
    d = g.shape[-1]
    if any(n != d for n in t.shape):
        raise RankMismatchError(f"tensor shape {t.shape} does not match dimension {d}")
    return float(_norm(jnp.asarray(t), jnp.linalg.inv(jnp.asarray(g))))


def batch_norm(t: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Norms of a batch of 2-tensors."""
    value = np.einsum("nij,nip,njq,npq->n", t, ginv, ginv, t)
    return np.sqrt(np.maximum(value, 0.0))


def invariants(field: MetricField, points: np.ndarray, *, bach: bool = True) -> Invariants:
    """Scalar, Ricci, |W| and (optionally) Ricci-form Bach at every point."""
    if bach:
        _require_dimension_four(field)
    kernel = _invariants_with_bach if bach else _invariants_without_bach
    out = map_field(field, points, kernel, 4 if bach else 2)
    return Invariants(
        g=out["g"],
        ginv=out["ginv"],
        sqrt_det=out["sqrt_det"],
        scalar=out["scalar"],
        ricci=out["ricci"],
        weyl_norm=out["weyl_norm"],
        bach=out.get("bach"),
        bach_norm=out.get("bach_norm"),
    )


def first_bianchi_residual(riemann: np.ndarray) -> float:
    r = np.asarray(riemann)
    cyclic = r + np.einsum("iklj->ijkl", r) + np.einsum("iljk->ijkl", r)
    return float(np.max(np.abs(cyclic)))


def weyl_trace_residual(weyl: np.ndarray, g: np.ndarray) -> float:
    ginv = np.linalg.inv(g)
    traces = [np.einsum("ik,ijkl->jl", ginv, weyl), np.einsum("il,ijkl->jk", ginv, weyl)]
    return float(max(np.max(np.abs(t)) for t in traces))


def bach_divergence(field: MetricField, grid: ChartGrid) -> np.ndarray:
    """Pointwise |div B|_g on a periodic grid, with spectral derivatives of nodal Bach values."""
    if not grid.periodic:
        raise NonPeriodicGridError("bach_divergence needs a periodic-box grid")
    _require_dimension_four(field)
    inv = invariants(field, grid.nodes, bach=True)
    gamma = map_field(field, grid.nodes, _christoffel_kernel, 2)[0]
    bach = inv.bach.reshape(grid.shape + (4, 4))
    partial = np.stack(
        [periodic_derivative(bach, grid, tuple(int(a == k) for a in range(4))) for k in range(4)], axis=-1
    ).reshape(grid.size, 4, 4, 4)
    b = inv.bach
    covariant = (
        partial
        - np.einsum("nmki,nmj->nijk", gamma, b)
        - np.einsum("nmkj,nim->nijk", gamma, b)
    )
    div = np.einsum("njk,nijk->ni", inv.ginv, covariant)
    norm = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", div, inv.ginv, div), 0.0))
    logger.info("[curvature] bach divergence | nodes=%d max=%.3e", grid.size, float(np.max(norm)))
    return norm / (1.0 + inv.bach_norm)
