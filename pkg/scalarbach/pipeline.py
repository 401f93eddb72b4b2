from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from functools import partial
import itertools
import logging
import math
from typing import Callable, Optional, Sequence, Union

import jax
import jax.numpy as jnp
import numpy as np
from pydantic import BaseModel, Field, field_validator

from .aubin import DeformationSpec, aubin_terms, deform_metric
from .chart import ChartGrid, GridSpec, integrate, make_chart
from .config import Topology, get_config
from .conformal import mixed_values, scaled_metric
from .curvature import Invariants, invariants
from .jets import Derivs, MetricField, ScalarField, add_derivs, compose, power_derivs, scale_derivs
from .profile import BumpProfile, bump_profile, check_profile
from .spectral import NormalizationResult, minimize_and_normalize
from .utils import (
    AllCandidatesDegenerateError,
    BachDegenerateError,
    InvalidSpecError,
    NonFiniteFieldValueError,
    PhiNotNegativeError,
    PhiUnresolvedError,
    QuadratureOverflowError,
    RouteMismatchError,
    relative_residual,
)


logger = logging.getLogger(__name__)

# Squared distance below which a node counts as the ball center
_CENTER_TOL = 1e-24


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float


# ---------------------------------------------------------------------------
# psi and eta
# ---------------------------------------------------------------------------


def _offsets(points, center, periods):
    diff = points - center
    if periods is not None:
        diff = diff - periods * jnp.round(diff / periods)
    return diff


@partial(jax.jit, static_argnums=(3, 4))
def _psi_derivs(points, centers, radius, profile: BumpProfile, order: int, periods) -> Derivs:
    n, d = points.shape
    total = tuple([jnp.ones(n)] + [jnp.zeros((n,) + (d,) * m) for m in range(1, order + 1)])
    eye = jnp.broadcast_to(jnp.eye(d), (n, d, d))
    for j in range(centers.shape[0]):
        diff = _offsets(points, centers[j], periods)
        q = jnp.sum(diff ** 2, axis=1)
        live = q > _CENTER_TOL
        safe = jnp.where(live, q, 1.0)
        q_jets = [safe, 2.0 * diff, 2.0 * eye] + [jnp.zeros((n,) + (d,) * m) for m in range(3, order + 1)]
        rho = compose(power_derivs(safe, 0.5, order), tuple(q_jets[: order + 1]), order)
        s = scale_derivs(rho, 1.0 / radius)
        y = compose(profile.derivatives(s[0], order), s, order)
        bump = [jnp.where(live, y[0], profile.delta) - 1.0]
        for m in range(1, order + 1):
            mask = live.reshape((n,) + (1,) * m)
            bump.append(jnp.where(mask, y[m], 0.0))
        total = add_derivs(total, tuple(bump))
    return total


def _psi_fn(centers: np.ndarray, radius: float, profile: BumpProfile, periods: Optional[np.ndarray]) -> Callable:
    def fn(x):
        total = 1.0 + 0.0 * x[0]
        for center in centers:
            diff = _offsets(x, center, periods)
            q = jnp.dot(diff, diff)
            live = q > _CENTER_TOL
            s = jnp.sqrt(jnp.where(live, q, 1.0)) / radius
            total = total + jnp.where(live, profile(s), profile.delta) - 1.0
        return total

    return fn


def psi_field(
    profile: BumpProfile,
    balls: Union[Ball, Sequence[Ball]],
    grid: Optional[ChartGrid] = None,
    *,
    periods: Optional[np.ndarray] = None,
) -> ScalarField:
    """psi = y(rho / r) inside each ball and 1 outside; jets from the derivatives of y."""
    balls = [balls] if isinstance(balls, Ball) else list(balls)
    radii = {b.radius for b in balls}
    if len(radii) > 1:
        raise InvalidSpecError("all balls must share one radius")
    radius = radii.pop() if radii else 1.0
    if radius <= 0:
        raise InvalidSpecError("radius must be positive")
    if grid is not None:
        if grid.topology != Topology.POLAR_BALL or len(balls) != 1:
            raise InvalidSpecError("psi_field takes a polar-ball grid for a single ball")
        if not math.isclose(grid.radius, radius) or not np.allclose(grid.center, balls[0].center):
            raise InvalidSpecError("polar grid does not match the ball")
    centers = np.asarray([b.center for b in balls], dtype=float).reshape(-1, 4)
    period_arr = None if periods is None else jnp.asarray(periods, dtype=float)

    def source(points: np.ndarray, order: int) -> Derivs:
        return _psi_derivs(jnp.asarray(points), jnp.asarray(centers), float(radius), profile, order, period_arr)

    return ScalarField(source, label=f"psi(h={len(balls)},r={radius:g})", fn=_psi_fn(centers, radius, profile, period_arr))


def eta_field(psi: ScalarField) -> ScalarField:
    """eta = 2 sqrt(psi)."""
    return psi.sqrt().scaled(2.0, label=f"2sqrt({psi.label})")


# ---------------------------------------------------------------------------
# Double deformation
# ---------------------------------------------------------------------------


@dataclass
class DoubleDeformation:
    direct: MetricField
    factored: MetricField
    mismatch: float


def _sample(points: np.ndarray, count: int) -> np.ndarray:
    if points.shape[0] <= count:
        return points
    index = np.unique(np.linspace(0, points.shape[0] - 1, count).round().astype(int))
    return points[index]


def double_deformation(
    g: MetricField,
    psi: ScalarField,
    k: float,
    points: Union[ChartGrid, np.ndarray],
    *,
    samples: int = 32,
) -> DoubleDeformation:
    """psi g + d(k psi) d(k psi) built directly and as psi (g + d(2k sqrt psi) d(2k sqrt psi))."""
    direct = deform_metric(scaled_metric(g, psi), DeformationSpec(psi, k))
    factored = scaled_metric(deform_metric(g, DeformationSpec(psi.sqrt(), 2.0 * k)), psi)
    pts = _sample(np.asarray(points.nodes if isinstance(points, ChartGrid) else points, dtype=float), samples)
    left, right = direct.jets(pts, 4), factored.jets(pts, 4)
    mismatch = max(relative_residual(a, b) for a, b in zip(left.derivs, right.derivs))
    tolerance = get_config().route_tol
    logger.info("[pipeline] double deformation | k=%g points=%d mismatch=%.3e", k, pts.shape[0], mismatch)
    if mismatch > tolerance:
        raise RouteMismatchError(f"route mismatch {mismatch:.3e} exceeds route_tol {tolerance:.1e}")
    return DoubleDeformation(direct=direct, factored=factored, mismatch=mismatch)


def normalized_double_metric(g: MetricField, psi: ScalarField, k: float) -> MetricField:
    """(1 + k^2 |d psi|^2 / psi)^{-1/2} (psi g + k^2 d psi d psi) as a closed form."""
    if g.metric_fn is None or psi.fn is None:
        raise InvalidSpecError("the normalized double deformation needs closed forms for g and psi")
    grad = jax.grad(psi.fn)

    def metric(x):
        base = g.metric_fn(x)
        value = psi.fn(x)
        dpsi = grad(x)
        w = 1.0 + k ** 2 * (dpsi @ jnp.linalg.solve(base, dpsi)) / value
        return (value * base + k ** 2 * jnp.outer(dpsi, dpsi)) / jnp.sqrt(w)

    return MetricField.from_closed_form(
        metric, label=f"w^-1/2 g''[k={k:g}]*{g.label}", domain=g.domain, provenance=g.provenance
    )


# ---------------------------------------------------------------------------
# Phi
# ---------------------------------------------------------------------------


@dataclass
class PhiEvaluation:
    phi_direct: float
    phi_formula: float
    k: float
    t: float
    min_bach_norm: Optional[float] = None
    radial: list[dict] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return abs(self.phi_direct - self.phi_formula) / (1.0 + abs(self.phi_direct))


def _integrate(values: np.ndarray, grid: ChartGrid, g: MetricField, sqrt_det: np.ndarray) -> float:
    try:
        return integrate(values, grid, g, sqrt_det=sqrt_det)
    except NonFiniteFieldValueError as exc:
        raise QuadratureOverflowError(f"non-finite integrand on {grid.size} nodes") from exc


def _bar_invariants(g: MetricField, psi: ScalarField, k: float, grid: ChartGrid) -> Invariants:
    bar = deform_metric(g, DeformationSpec(psi.sqrt(), 2.0 * k))
    return invariants(bar, grid.nodes, bach=True)


def _radial_profile(grid: ChartGrid, columns: dict[str, np.ndarray]) -> list[dict]:
    if grid.radii is None:
        return []
    weights = grid.quadrature_weights
    rows = []
    for rho in np.unique(grid.radii):
        mask = grid.radii == rho
        row = {"rho": float(rho)}
        for name, values in columns.items():
            row[name] = float(np.sum(values[mask] * weights[mask]) / np.sum(weights[mask]))
        rows.append(row)
    return rows


def evaluate_phi(g: MetricField, psi: ScalarField, k: float, t: float, grid: ChartGrid) -> PhiEvaluation:
    """Phi head-on from the normalized double deformation, and from its expansion in psi."""
    if t < 0:
        raise InvalidSpecError("t must be >= 0")
    with_bach = t != 0
    tilde = invariants(normalized_double_metric(g, psi, k), grid.nodes, bach=with_bach)
    f_tilde = mixed_values(tilde, t) if with_bach else tilde.scalar
    phi_direct = _integrate(f_tilde, grid, g, tilde.sqrt_det)

    base = invariants(g, grid.nodes, bach=False)
    jet = g.jets(grid.nodes, 1)
    jet_psi = psi.jets(g.domain.locate(grid.nodes), 2)
    terms = aubin_terms(np.asarray(jet.g), np.asarray(jet.dg), base.ricci, jet_psi)
    value = np.asarray(jet_psi.value)
    a = terms.w - 1.0
    h2, p, lap, ric = terms.h2, terms.v_sq, terms.lap, terms.ric_ff
    k2 = k ** 2
    D = value + k2 * a

    bar_term = np.zeros(grid.size)
    bar_norm = None
    bar_scalar = None
    if with_bach:
        bar = _bar_invariants(g, psi, k, grid)
        bar_norm, bar_scalar = bar.bach_norm, bar.scalar
        bar_term = t * np.sqrt(bar_norm)
    integrand = (
        (base.scalar + bar_term - k2 * ric / D) * value
        + k2 * h2 / D
        + 1.5 * a / D
        - 0.5 * value * lap / D
        + 1.5 * value * (k2 ** 2 * p / D ** 2 - k2 ** 3 * h2 ** 2 / D ** 3)
        + 1.5 * k2 ** 2 * (a ** 3 / 4.0 - a * h2 * value) / D ** 3
    )
    phi_formula = _integrate(integrand, grid, g, base.sqrt_det)

    result = PhiEvaluation(
        phi_direct=phi_direct,
        phi_formula=phi_formula,
        k=float(k),
        t=float(t),
        min_bach_norm=float(np.min(bar_norm)) if bar_norm is not None else None,
    )
    columns = {"F_tilde": f_tilde, "S_tilde": tilde.scalar}
    if bar_norm is not None:
        columns.update({"bach_bar": bar_norm, "S_bar": bar_scalar})
    result.radial = _radial_profile(grid, columns)
    if result.residual > get_config().phi_tol:
        logger.warning("[pipeline] phi identity missed | direct=%.8e formula=%.8e", phi_direct, phi_formula)
    logger.info(
        "[pipeline] phi | k=%g t=%g direct=%.10e formula=%.10e residual=%.3e",
        k, t, phi_direct, phi_formula, result.residual,
    )
    return result


# ---------------------------------------------------------------------------
# k selection and the bound sampler
# ---------------------------------------------------------------------------


@dataclass
class KSelection:
    k: float
    candidates: list[float]
    min_norms: list[float]
    degenerate: bool = False


def min_bach_by_k(g: MetricField, psi: ScalarField, candidates: Sequence[float], grid: ChartGrid) -> list[float]:
    return [float(np.min(_bar_invariants(g, psi, k, grid).bach_norm)) for k in candidates]


def _argmax_k(candidates: Sequence[float], min_norms: Sequence[float]) -> KSelection:
    floor = get_config().bach_floor
    best = int(np.argmax(min_norms))
    selection = KSelection(k=float(candidates[best]), candidates=list(candidates), min_norms=list(min_norms))
    if min_norms[best] <= floor:
        selection.degenerate = True
    return selection


def select_k(g: MetricField, psi: ScalarField, candidates: Sequence[float], grid: ChartGrid) -> KSelection:
    """The candidate k whose deformed metric has the largest grid-min |B|."""
    if not candidates:
        raise InvalidSpecError("candidates must not be empty")
    selection = _argmax_k(candidates, min_bach_by_k(g, psi, candidates, grid))
    logger.info("[pipeline] select k | k=%g min_norm=%.3e", selection.k, max(selection.min_norms))
    if selection.degenerate:
        raise AllCandidatesDegenerateError(
            f"every candidate leaves grid-min |B| at or below bach_floor {get_config().bach_floor:.1e}"
        )
    return selection


class BoundSample(BaseModel):
    k: float
    q: float
    max_bach_norm: float


def bound_sampler(g: MetricField, psi: ScalarField, k_list: Sequence[float], grid: ChartGrid) -> list[BoundSample]:
    """Q(k) = max |B_bar|^{1/2} / (1 + (r - rho)^{-1/2}) over the ball nodes."""
    if grid.topology != Topology.POLAR_BALL:
        raise InvalidSpecError("bound_sampler needs a polar-ball grid")
    weight = 1.0 + (grid.radius - grid.radii) ** -0.5
    table = []
    for k in k_list:
        norms = _bar_invariants(g, psi, k, grid).bach_norm
        table.append(BoundSample(k=float(k), q=float(np.max(np.sqrt(norms) / weight)), max_bach_norm=float(np.max(norms))))
        logger.info("[pipeline] bound | k=%g q=%.6e", k, table[-1].q)
    return table


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


class ConstructionParams(BaseModel):
    radius: float = 0.5
    nu: float = 1.0
    balls: int = 1
    delta: float = 0.3
    k_candidates: list[float] = Field(default_factory=lambda: [0.05])
    bound_k: list[float] = Field(default_factory=list)
    center: Optional[list[float]] = None
    # Radial nodes per panel, Hopf height, two Hopf angles
    polar_resolution: list[int] = Field(default_factory=lambda: [24, 6, 8, 8])
    # Box grid for global assembly and normalization on periodic bases
    grid: GridSpec = Field(default_factory=lambda: GridSpec(resolution=[8, 8, 8, 8]))
    normalize: bool = False
    route_samples: int = 32

    @field_validator("radius")
    @classmethod
    def _radius(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("radius must be positive")
        return value

    @field_validator("nu")
    @classmethod
    def _nu(cls, value: float) -> float:
        if value < 0:
            raise ValueError("nu must be >= 0")
        return value

    @field_validator("balls")
    @classmethod
    def _balls(cls, value: int) -> int:
        if value < 0:
            raise ValueError("balls must be >= 0")
        return value

    @field_validator("k_candidates")
    @classmethod
    def _candidates(cls, value: list[float]) -> list[float]:
        if not value or any(k <= 0 for k in value):
            raise ValueError("k_candidates must be a non-empty list of positive numbers")
        return value


class BallContribution(BaseModel):
    center: list[float]
    radius: float
    phi_direct: float
    phi_formula: float
    phi_residual: float
    base_integral: float
    volume: float
    route_mismatch: float
    min_bach_norm: Optional[float] = None
    meets_coverage: bool = False


class CoverageCertificate(BaseModel):
    nu: float
    balls: int
    capacity: int
    covered_fraction: float
    mean_f: float
    all_balls_meet_bound: bool


class NormalizationSummary(BaseModel):
    K: float
    el_residual: float
    deviation: float
    mu_trial: float
    descent_iterations: int
    newton_iterations: int
    passed: bool


class ConstructionReport(BaseModel):
    metric: str
    t: float
    phi_value: Optional[float] = None
    phi_formula: Optional[float] = None
    phi_residual: Optional[float] = None
    min_bach_norm: Optional[float] = None
    k_chosen: Optional[float] = None
    k_candidates: list[float] = Field(default_factory=list)
    min_bach_by_k: list[float] = Field(default_factory=list)
    all_candidates_degenerate: bool = False
    base_integral: Optional[float] = None
    per_ball: list[BallContribution] = Field(default_factory=list)
    coverage: Optional[CoverageCertificate] = None
    bound_samples: list[BoundSample] = Field(default_factory=list)
    radial_profile: list[dict[str, float]] = Field(default_factory=list)
    normalization: Optional[NormalizationSummary] = None
    profile_checks: dict[str, bool] = Field(default_factory=dict)
    success: bool = False
    notes: list[str] = Field(default_factory=list)


def ball_count(capacity: int, requested: int, nu: float) -> int:
    """Number of balls used for coverage level nu: grows with nu, capped by capacity and request."""
    return min(requested, capacity, math.ceil(capacity * nu / (1.0 + nu)))


def ball_sites(g: MetricField, radius: float, center: Optional[Sequence[float]] = None) -> list[np.ndarray]:
    """Disjoint ball centers: a lattice on periodic domains, one site otherwise."""
    domain = g.domain
    if not domain.periodic:
        site = 0.5 * (domain.lower + domain.upper) if center is None else np.asarray(center, dtype=float)
        if np.any(site - radius < domain.lower - 1e-12) or np.any(site + radius > domain.upper + 1e-12):
            raise InvalidSpecError("radius must keep the ball inside the chart")
        return [site]
    sides = domain.upper - domain.lower
    counts = [int(math.floor(side / (2.0 * radius))) for side in sides]
    if min(counts) < 1:
        raise InvalidSpecError("radius must be at most half the box side")
    axes = [domain.lower[a] + (np.arange(counts[a]) + 0.5) * sides[a] / counts[a] for a in range(len(counts))]
    return [np.array(site) for site in itertools.product(*axes)]


async def _gather(fn: Callable, items: Sequence, threads: int) -> list:
    semaphore = asyncio.Semaphore(max(1, threads))

    async def run_one(item):
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    return list(await asyncio.gather(*(run_one(item) for item in items)))


def _map_balls(fn: Callable, items: Sequence) -> list:
    if not items:
        return []
    return asyncio.run(_gather(fn, items, get_config().threads))


@dataclass
class _BallWork:
    ball: Ball
    psi: ScalarField
    grid: ChartGrid
    f_base: np.ndarray
    base_integral: float
    volume: float
    min_norms: list[float] = field(default_factory=list)


def run_construction(g: MetricField, t: float, params: ConstructionParams) -> ConstructionReport:
    """Place the balls, pick k, evaluate Phi locally and globally, and certify the result."""
    if t < 0:
        raise InvalidSpecError("t must be >= 0")
    report = ConstructionReport(metric=g.label, t=float(t), k_candidates=list(params.k_candidates))
    cfg = get_config()
    with_bach = t != 0

    profile = bump_profile(params.delta)
    report.profile_checks = check_profile(profile).checks

    sites = ball_sites(g, params.radius, params.center)
    capacity = len(sites)
    count = ball_count(capacity, params.balls, params.nu)
    balls = [Ball(center=site, radius=params.radius) for site in sites[:count]]
    periods = g.domain.periods
    logger.info("[pipeline] construction | metric=%s t=%g balls=%d capacity=%d", g.label, t, count, capacity)

    box: Optional[ChartGrid] = None
    box_inv: Optional[Invariants] = None
    if g.domain.periodic:
        sides = g.domain.upper - g.domain.lower
        box = make_chart(
            params.grid.model_copy(update={"origin": [float(v) for v in g.domain.lower], "extents": [float(v) for v in sides]})
        )
        box_inv = invariants(g, box.nodes, bach=with_bach)

    def prepare(ball: Ball) -> _BallWork:
        grid = make_chart(
            GridSpec(
                topology=Topology.POLAR_BALL,
                extents=[ball.radius],
                resolution=params.polar_resolution,
                center=list(ball.center),
                radial_breaks=[profile.a, profile.b],
            )
        )
        psi = psi_field(profile, ball, grid, periods=periods)
        inv = invariants(g, grid.nodes, bach=with_bach)
        f_base = mixed_values(inv, t) if with_bach else inv.scalar
        work = _BallWork(
            ball=ball,
            psi=psi,
            grid=grid,
            f_base=f_base,
            base_integral=_integrate(f_base, grid, g, inv.sqrt_det),
            volume=_integrate(np.ones(grid.size), grid, g, inv.sqrt_det),
        )
        if with_bach:
            work.min_norms = min_bach_by_k(g, psi, params.k_candidates, grid)
        return work

    works = _map_balls(prepare, balls)

    if with_bach:
        base_min = float(np.min(box_inv.bach_norm)) if box_inv is not None else np.inf
        combined = [
            min([base_min] + [w.min_norms[i] for w in works]) for i in range(len(params.k_candidates))
        ]
        finite = [value if np.isfinite(value) else 0.0 for value in combined]
        selection = _argmax_k(params.k_candidates, finite)
        report.min_bach_by_k = finite
        if selection.degenerate:
            report.all_candidates_degenerate = True
            selection.k = float(max(params.k_candidates))
            report.notes.append("every k candidate leaves |B| at or below bach_floor; using the largest candidate")
            logger.warning("[pipeline] all candidates degenerate | fallback k=%g", selection.k)
        k = selection.k
    else:
        k = float(max(params.k_candidates))
    report.k_chosen = k

    def contribute(work: _BallWork) -> tuple[BallContribution, PhiEvaluation]:
        route = double_deformation(g, work.psi, k, work.grid, samples=params.route_samples)
        phi = evaluate_phi(g, work.psi, k, t, work.grid)
        contribution = BallContribution(
            center=[float(c) for c in work.ball.center],
            radius=work.ball.radius,
            phi_direct=phi.phi_direct,
            phi_formula=phi.phi_formula,
            phi_residual=phi.residual,
            base_integral=work.base_integral,
            volume=work.volume,
            route_mismatch=route.mismatch,
            min_bach_norm=phi.min_bach_norm,
        )
        return contribution, phi

    outcomes = _map_balls(contribute, works)
    report.per_ball = [c for c, _ in outcomes]
    if outcomes:
        report.radial_profile = outcomes[0][1].radial

    if box is not None:
        f_box = mixed_values(box_inv, t) if with_bach else box_inv.scalar
        base_integral = _integrate(f_box, box, g, box_inv.sqrt_det)
        total_volume = _integrate(np.ones(box.size), box, g, box_inv.sqrt_det)
    elif works:
        base_integral = works[0].base_integral
        total_volume = works[0].volume
    else:
        region = make_chart(
            GridSpec(
                topology=Topology.POLAR_BALL,
                extents=[params.radius],
                resolution=params.polar_resolution,
                center=list(sites[0]),
            )
        )
        inv = invariants(g, region.nodes, bach=with_bach)
        f_region = mixed_values(inv, t) if with_bach else inv.scalar
        base_integral = _integrate(f_region, region, g, inv.sqrt_det)
        total_volume = _integrate(np.ones(region.size), region, g, inv.sqrt_det)
    report.base_integral = base_integral

    if box is not None:
        phi_value = base_integral + sum(c.phi_direct - c.base_integral for c in report.per_ball)
        phi_formula = base_integral + sum(c.phi_formula - c.base_integral for c in report.per_ball)
    elif report.per_ball:
        phi_value, phi_formula = report.per_ball[0].phi_direct, report.per_ball[0].phi_formula
    else:
        phi_value = phi_formula = base_integral
    report.phi_value = phi_value
    report.phi_formula = phi_formula
    report.phi_residual = abs(phi_value - phi_formula) / (1.0 + abs(phi_value))

    mean_f = base_integral / total_volume
    for contribution in report.per_ball:
        contribution.meets_coverage = contribution.phi_direct <= -params.nu * mean_f * contribution.volume
    report.coverage = CoverageCertificate(
        nu=params.nu,
        balls=count,
        capacity=capacity,
        covered_fraction=sum(c.volume for c in report.per_ball) / total_volume,
        mean_f=mean_f,
        all_balls_meet_bound=all(c.meets_coverage for c in report.per_ball),
    )
    if count == capacity and count < params.balls:
        logger.warning("[pipeline] coverage capped | requested=%d capacity=%d", params.balls, capacity)

    if with_bach:
        minima = [c.min_bach_norm for c in report.per_ball if c.min_bach_norm is not None]
        if box_inv is not None:
            minima.append(float(np.min(box_inv.bach_norm)))
        report.min_bach_norm = float(min(minima)) if minima else 0.0

    if params.bound_k and works:
        report.bound_samples = bound_sampler(g, works[0].psi, params.bound_k, works[0].grid)

    logger.info("[pipeline] phi total | phi=%.10e k=%g min_bach=%s", phi_value, k, report.min_bach_norm)
    if report.phi_residual > cfg.phi_tol:
        report.notes.append("the two Phi routes disagree; raise the radial entry of polar_resolution")
        raise PhiUnresolvedError(
            f"Phi residual {report.phi_residual:.3e} exceeds phi_tol {cfg.phi_tol:.1e}", report=report
        )
    if not phi_value < 0:
        report.notes.append("Phi is not negative; try a larger nu or a smaller radius")
        raise PhiNotNegativeError(f"Phi = {phi_value:.6e} is not negative", report=report)
    if with_bach and not report.min_bach_norm > cfg.bach_floor:
        if not g.domain.periodic:
            report.notes.append("a flat base with radial psi stays conformally flat, so the deformed Bach tensor vanishes")
        raise BachDegenerateError(
            f"grid-min |B| = {report.min_bach_norm:.3e} is not above bach_floor {cfg.bach_floor:.1e}", report=report
        )

    if params.normalize:
        if box is None:
            report.notes.append("normalization needs a closed (periodic) base; skipped")
        else:
            psi_all = psi_field(profile, balls, periods=periods)
            result = minimize_and_normalize(normalized_double_metric(g, psi_all, k), box, t)
            report.normalization = _summarize(result)

    report.success = True
    return report


def _summarize(result: NormalizationResult) -> NormalizationSummary:
    cfg = get_config()
    return NormalizationSummary(
        K=result.K,
        el_residual=result.el_residual,
        deviation=result.deviation,
        mu_trial=result.mu_trial,
        descent_iterations=result.descent_iterations,
        newton_iterations=result.newton_iterations,
        passed=result.el_residual <= cfg.el_tol and result.deviation <= cfg.norm_tol,
    )
