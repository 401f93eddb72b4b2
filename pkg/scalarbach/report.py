from __future__ import annotations

import csv
from enum import Enum
import json
import logging
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from .pipeline import ConstructionReport


logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class RunStatus(str, Enum):
    """Outcome of a run."""
    OK = "ok"
    HYPOTHESIS_FAILED = "hypothesis-failed"
    ERROR = "error"


class Conventions(BaseModel):
    """Echoed into every artifact."""

    index: str = "R_ijkl with R_ijij > 0 on spheres; Ricci R_jl = R^i_jil; derivative indices last"
    conformal: str = "exponential e^{2u} g canonical; power u^2 g accepted"
    weyl: str = "W = Rm - Ric (.) g / (n - 2) + S g (.) g / (2 (n - 1)(n - 2))"
    bach: str = "B_ij = nabla^k nabla^l W_ikjl + R^kl W_ikjl / 2"
    mixed_curvature: str = "F = S + t |B|^{1/2} (scalar-bach) or S + t |W| (scalar-weyl)"


class ErrorRecord(BaseModel):
    code: str
    message: str


class CheckResult(BaseModel):
    name: str
    residual: float
    tolerance: float
    passed: bool

    @classmethod
    def of(cls, name: str, residual: float, tolerance: float) -> "CheckResult":
        residual = float(residual)
        return cls(name=name, residual=residual, tolerance=float(tolerance), passed=bool(residual <= tolerance))


class CurvatureRecord(BaseModel):
    metric: str
    point: list[float]
    christoffel: list
    ricci: list
    scalar: float
    weyl_norm: float
    bach_ricci: Optional[list] = None
    bach_weyl: Optional[list] = None
    bach_norm: Optional[float] = None
    bach_cross_residual: Optional[float] = None
    bianchi_residual: float
    weyl_trace_residual: float


class DeformRecord(BaseModel):
    metric: str
    f: str
    k: float
    report: str
    point: Optional[list[float]] = None
    scalar_closed: Optional[float] = None
    scalar_direct: Optional[float] = None
    ricci_residual: Optional[float] = None
    riemann_residual: Optional[float] = None
    volume_ratio: Optional[float] = None
    bach_error: Optional[list] = None
    bach_error_norm: Optional[float] = None
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    residual: Optional[float] = None


class ConformalRecord(BaseModel):
    metric: str
    factor: str
    check: str
    t: float
    point: list[float]
    residuals: dict[str, float] = Field(default_factory=dict)
    residual: float


class EigenRecord(BaseModel):
    metric: str
    t: float
    nodes: int
    mu: float
    sign: str
    residual: float
    iterations: int
    consistent: bool


class NormalizationRecord(BaseModel):
    metric: str
    t: float
    nodes: int
    K: float
    mu_trial: float
    el_residual: float
    deviation: float
    descent_iterations: int
    newton_iterations: int
    passed: bool


class VerifyRecord(BaseModel):
    suite: str
    seed: int
    checks: list[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


Result = Union[
    CurvatureRecord,
    DeformRecord,
    ConformalRecord,
    EigenRecord,
    NormalizationRecord,
    ConstructionReport,
    VerifyRecord,
]


class RunReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    command: str
    status: RunStatus = RunStatus.OK
    exit_code: int = 0
    error: Optional[ErrorRecord] = None
    conventions: Conventions = Field(default_factory=Conventions)
    config: dict[str, Any] = Field(default_factory=dict)
    result: Optional[Result] = None


def as_list(value: Any) -> list:
    return np.asarray(value, dtype=float).tolist()


def write_json(report: RunReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.model_dump(mode="json"), f, ensure_ascii=False, indent=2)
    logger.info("[report] json | path=%s status=%s", path, report.status.value)
    return path


def write_csv(rows: Sequence[dict[str, Any]], path: Path) -> Optional[Path]:
    if not rows:
        logger.warning("[report] csv skipped | path=%s reason=no rows", path)
        return None
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    logger.info("[report] csv | path=%s rows=%d", path, len(rows))
    return path


def field_rows(nodes: np.ndarray, **columns: np.ndarray) -> list[dict[str, float]]:
    """One row per node: coordinates x1..x4 followed by the named nodal values."""
    rows = []
    for index, node in enumerate(np.asarray(nodes)):
        row = {f"x{a + 1}": float(c) for a, c in enumerate(node)}
        for name, values in columns.items():
            row[name] = float(values[index])
        rows.append(row)
    return rows


def schema() -> dict[str, Any]:
    return RunReport.model_json_schema()
