from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from .aubin import DeformationSpec, bach_error, deform_metric, deformed_curvature_closed, scalar_integral_identity
from .catalog import get_metric, scalar_from_expression, user_metric
from .chart import Domain, GridSpec, make_chart
from .config import (
    AppConfig,
    BachFormula,
    Command,
    ConformalCheck,
    ConformalConvention,
    CurvatureKind,
    DeformReport,
    Provenance,
    Suite,
    Topology,
    get_config,
    set_config,
)
from .conformal import ConformalFactor, bach_covariance_residual, conformal_laws_residual, covariance_residual
from .curvature import (
    bach_from_jet,
    curvature_bundle,
    first_bianchi_residual,
    tensor_norm,
    weyl_trace_residual,
)
from .jets import MetricField, jet_of_metric
from .pipeline import ConstructionParams, ConstructionReport, run_construction
from .report import (
    ConformalRecord,
    CurvatureRecord,
    DeformRecord,
    EigenRecord,
    ErrorRecord,
    NormalizationRecord,
    RunReport,
    RunStatus,
    as_list,
    field_rows,
    write_csv,
    write_json,
)
from .spectral import minimize_and_normalize, sign_trichotomy
from .utils import ConfigParseError, GeometryError, HypothesisError, VerificationFailedError, relative_residual
from .verify import run_suite


logger = logging.getLogger(__name__)

Rows = list[dict[str, float]]


class MetricSpec(BaseModel):
    """A catalog name with parameters, or user component expressions keyed "11", "12", ..."""

    name: str = "euclidean"
    params: dict[str, float] = Field(default_factory=dict)
    components: Optional[dict[str, str]] = None
    provenance: Provenance = Provenance.DUAL_NUMBER
    side: float = 2 * math.pi
    periodic: bool = True


class RunConfig(BaseModel):
    command: Command
    metric: MetricSpec = Field(default_factory=MetricSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    at: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    t: float = 0.0

    # curvature
    bach: BachFormula = BachFormula.BOTH

    # deform
    f: str = "0.3*sin(x1+x2)"
    k: float = 1.0
    report: DeformReport = DeformReport.CURVATURE

    # conformal
    factor: str = "0.1*sin(x1)"
    convention: ConformalConvention = ConformalConvention.EXPONENTIAL
    check: ConformalCheck = ConformalCheck.LAWS
    phi: str = "1 + 0.2*cos(x2)"
    kind: CurvatureKind = CurvatureKind.SCALAR_BACH

    # construct
    balls: int = 1
    radius: float = 0.5
    nu: float = 1.0
    delta: float = 0.3
    k_candidates: list[float] = Field(default_factory=lambda: [0.05])
    bound_k: list[float] = Field(default_factory=list)
    normalize: bool = False
    polar_resolution: list[int] = Field(default_factory=lambda: [24, 6, 8, 8])

    # verify
    suite: Suite = Suite.ALL
    samples: int = 5

    seed: int = 0
    output_dir: Optional[str] = None
    csv: bool = False
    tolerances: dict[str, float] = Field(default_factory=dict)

    @field_validator("at")
    @classmethod
    def _four_coordinates(cls, value: list[float]) -> list[float]:
        if len(value) != 4:
            raise ValueError("points need four coordinates")
        return value

    @field_validator("tolerances")
    @classmethod
    def _tolerances(cls, value: dict[str, float]) -> dict[str, float]:
        known = set(AppConfig.model_fields)
        unknown = sorted(set(value) - known)
        if unknown:
            raise ValueError(f"unknown tolerance keys: {', '.join(unknown)}")
        return value


def load_run_config(path: Path) -> RunConfig:
    try:
        return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (ValidationError, OSError) as exc:
        raise ConfigParseError(f"cannot load run config {path}: {exc}") from exc


def effective_settings(config: RunConfig) -> AppConfig:
    """Process settings with the run's tolerance overrides applied and validated."""
    try:
        return AppConfig.model_validate({**get_config().model_dump(), **config.tolerances})
    except ValidationError as exc:
        raise ConfigParseError(f"invalid tolerances: {exc}") from exc


def build_metric(spec: MetricSpec) -> MetricField:
    if spec.components is None:
        return get_metric(spec.name, spec.params)
    domain = Domain.box(spec.side) if spec.periodic else Domain.centered(0.5 * spec.side)
    provenance = Provenance.DUAL_NUMBER if spec.provenance == Provenance.CATALOG_ANALYTIC else spec.provenance
    return user_metric(spec.components, provenance=provenance, domain=domain, label=spec.name)


def box_grid(g: MetricField, spec: GridSpec):
    """The grid of a run; periodic boxes follow the metric's domain."""
    if spec.topology == Topology.PERIODIC_BOX and g.domain.periodic:
        spec = spec.model_copy(
            update={
                "origin": [float(v) for v in g.domain.lower],
                "extents": [float(v) for v in g.domain.upper - g.domain.lower],
            }
        )
    return make_chart(spec)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _curvature(config: RunConfig, g: MetricField) -> tuple[CurvatureRecord, Rows]:
    with_bach = g.dimension == 4
    jet = jet_of_metric(g, config.at, 4 if with_bach else 2)
    bundle = curvature_bundle(jet)
    record = CurvatureRecord(
        metric=g.label,
        point=list(config.at),
        christoffel=as_list(bundle.gamma),
        ricci=as_list(bundle.ricci),
        scalar=bundle.scalar,
        weyl_norm=tensor_norm(bundle.weyl, jet),
        bianchi_residual=first_bianchi_residual(bundle.riemann),
        weyl_trace_residual=weyl_trace_residual(bundle.weyl, np.asarray(jet.g)),
    )
    if with_bach:
        if config.bach in (BachFormula.RICCI, BachFormula.BOTH):
            record.bach_ricci = as_list(bach_from_jet(jet, BachFormula.RICCI))
        if config.bach in (BachFormula.WEYL, BachFormula.BOTH):
            record.bach_weyl = as_list(bach_from_jet(jet, BachFormula.WEYL))
        reference = record.bach_ricci if record.bach_ricci is not None else record.bach_weyl
        record.bach_norm = tensor_norm(np.asarray(reference), jet)
        if config.bach == BachFormula.BOTH:
            record.bach_cross_residual = relative_residual(record.bach_weyl, record.bach_ricci)
    return record, []


def _deform(config: RunConfig, g: MetricField) -> tuple[DeformRecord, Rows]:
    spec = DeformationSpec(scalar_from_expression(config.f), config.k)
    record = DeformRecord(metric=g.label, f=config.f, k=config.k, report=config.report.value)
    if config.report == DeformReport.IDENTITY:
        lhs, rhs = scalar_integral_identity(g, spec, box_grid(g, config.grid))
        record.lhs, record.rhs = lhs, rhs
        record.residual = abs(lhs - rhs) / (1.0 + abs(rhs))
        return record, []
    record.point = list(config.at)
    if config.report == DeformReport.BACH_ERROR:
        error = bach_error(g, spec, config.at)
        record.bach_error = as_list(error)
        record.bach_error_norm = tensor_norm(error, g.jet(config.at, 0))
        return record, []
    closed = deformed_curvature_closed(g, spec, config.at)
    direct = curvature_bundle(deform_metric(g, spec).jet(config.at, 2))
    record.scalar_closed = closed.scalar_closed
    record.scalar_direct = direct.scalar
    record.ricci_residual = relative_residual(closed.ricci_closed, direct.ricci)
    record.riemann_residual = relative_residual(closed.riemann_closed, direct.riemann)
    record.volume_ratio = closed.vol_ratio
    record.residual = max(
        record.ricci_residual, record.riemann_residual, relative_residual(closed.scalar_closed, direct.scalar)
    )
    return record, []


def _conformal(config: RunConfig, g: MetricField) -> tuple[ConformalRecord, Rows]:
    factor = ConformalFactor(scalar_from_expression(config.factor), config.convention)
    residuals: dict[str, float] = {}
    if config.check == ConformalCheck.LAWS:
        residuals = conformal_laws_residual(g, factor.exponent().exp(2.0), config.at)
        residual = max(residuals.values())
    elif config.check == ConformalCheck.COVARIANCE:
        residual = covariance_residual(
            g, factor, config.t, scalar_from_expression(config.phi), config.at, kind=config.kind
        )
    else:
        residual = bach_covariance_residual(g, factor, config.at)
    record = ConformalRecord(
        metric=g.label,
        factor=config.factor,
        check=config.check.value,
        t=config.t,
        point=list(config.at),
        residuals=residuals,
        residual=residual,
    )
    return record, []


def _eigen(config: RunConfig, g: MetricField) -> tuple[EigenRecord, Rows]:
    grid = box_grid(g, config.grid)
    result = sign_trichotomy(g, grid, config.t)
    record = EigenRecord(
        metric=g.label,
        t=config.t,
        nodes=grid.size,
        mu=result.mu,
        sign=result.sign.value,
        residual=result.eigen.residual,
        iterations=result.eigen.iterations,
        consistent=result.consistent,
    )
    rows = field_rows(grid.nodes, phi=result.eigen.phi, normalized_potential=result.normalized_potential)
    return record, rows


def _normalize(config: RunConfig, g: MetricField) -> tuple[NormalizationRecord, Rows]:
    grid = box_grid(g, config.grid)
    result = minimize_and_normalize(g, grid, config.t)
    cfg = get_config()
    record = NormalizationRecord(
        metric=g.label,
        t=config.t,
        nodes=grid.size,
        K=result.K,
        mu_trial=result.mu_trial,
        el_residual=result.el_residual,
        deviation=result.deviation,
        descent_iterations=result.descent_iterations,
        newton_iterations=result.newton_iterations,
        passed=result.el_residual <= cfg.el_tol and result.deviation <= cfg.norm_tol,
    )
    rows = field_rows(grid.nodes, u=result.u, v=result.v, normalized_potential=result.normalized_potential)
    return record, rows


def construction_params(config: RunConfig) -> ConstructionParams:
    try:
        return ConstructionParams(
            radius=config.radius,
            nu=config.nu,
            balls=config.balls,
            delta=config.delta,
            k_candidates=config.k_candidates,
            bound_k=config.bound_k,
            normalize=config.normalize,
            polar_resolution=config.polar_resolution,
            grid=config.grid,
        )
    except ValidationError as exc:
        raise ConfigParseError(f"invalid construction parameters: {exc}") from exc


def _construct(config: RunConfig, g: MetricField) -> tuple[ConstructionReport, Rows]:
    report = run_construction(g, config.t, construction_params(config))
    return report, list(report.radial_profile)


def _verify(config: RunConfig, g: Optional[MetricField]):
    record = run_suite(config.suite, config.seed, samples=config.samples)
    if not record.passed:
        failed = ", ".join(c.name for c in record.checks if not c.passed)
        raise VerificationFailedError(f"checks above tolerance: {failed}", report=record)
    return record, []


HANDLERS: dict[Command, Callable[[RunConfig, Any], tuple[Any, Rows]]] = {
    Command.CURVATURE: _curvature,
    Command.DEFORM: _deform,
    Command.CONFORMAL: _conformal,
    Command.EIGEN: _eigen,
    Command.NORMALIZE: _normalize,
    Command.CONSTRUCT: _construct,
    Command.VERIFY: _verify,
}


@dataclass
class RunOutcome:
    report: RunReport
    json_path: Path
    csv_path: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return self.report.exit_code


def _fail(report: RunReport, exc: Exception, status: RunStatus, exit_code: int) -> None:
    code = getattr(exc, "code", "internal-error")
    report.status = status
    report.exit_code = exit_code
    report.error = ErrorRecord(code=code, message=str(exc))
    partial = getattr(exc, "report", None)
    if isinstance(partial, BaseModel):
        report.result = partial


def run(config: RunConfig) -> RunOutcome:
    """Execute one command; exit 0 on success, 2 when a hypothesis fails, 1 otherwise."""
    report = RunReport(command=config.command.value, config=config.model_dump(mode="json"))
    rows: Rows = []
    previous = get_config()
    try:
        settings = effective_settings(config)
        set_config(settings)
        metric = None if config.command == Command.VERIFY else build_metric(config.metric)
        logger.info("[runner] start | command=%s metric=%s", config.command.value, getattr(metric, "label", "-"))
        report.result, rows = HANDLERS[config.command](config, metric)
    except HypothesisError as exc:
        logger.warning("[runner] hypothesis failed | code=%s %s", exc.code, exc)
        _fail(report, exc, RunStatus.HYPOTHESIS_FAILED, 2)
    except GeometryError as exc:
        logger.error("[runner] failed | code=%s %s", exc.code, exc)
        _fail(report, exc, RunStatus.ERROR, 1)
    except Exception as exc:
        logger.exception("[runner] internal error")
        _fail(report, exc, RunStatus.ERROR, 1)
    finally:
        set_config(previous)

    if isinstance(report.result, ConstructionReport) and not rows:
        rows = list(report.result.radial_profile)
    out_dir = Path(config.output_dir or previous.output_dir)
    json_path = write_json(report, out_dir / f"{config.command.value}.json")
    csv_path = write_csv(rows, out_dir / f"{config.command.value}.csv") if config.csv else None
    return RunOutcome(report=report, json_path=json_path, csv_path=csv_path)
