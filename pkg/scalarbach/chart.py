from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import TYPE_CHECKING, Any, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from .config import Topology
from .utils import (
    InvalidSpecError,
    NonFiniteFieldValueError,
    NonPeriodicGridError,
    PointOutsideChartError,
    compensated_sum,
)

if TYPE_CHECKING:
    from .jets import MetricField, ScalarField


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ChartPoint:
    coords: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.coords.shape[0])


def as_point(p: Union[ChartPoint, Sequence[float], np.ndarray]) -> ChartPoint:
    if isinstance(p, ChartPoint):
        return p
    coords = np.asarray(p, dtype=float).reshape(-1)
    return ChartPoint(coords=coords)


@dataclass(frozen=True, eq=False)
class Domain:
    """Coordinate box of a chart; periodic domains wrap into [lower, upper)."""

    lower: np.ndarray
    upper: np.ndarray
    periodic: bool = False

    @classmethod
    def box(cls, side: float, dimension: int = 4, *, periodic: bool = True) -> "Domain":
        return cls(np.zeros(dimension), np.full(dimension, float(side)), periodic)

    @classmethod
    def centered(cls, half_width: float, dimension: int = 4) -> "Domain":
        return cls(np.full(dimension, -float(half_width)), np.full(dimension, float(half_width)), False)

    @property
    def dimension(self) -> int:
        return int(self.lower.shape[0])

    @property
    def periods(self) -> Optional[np.ndarray]:
        return (self.upper - self.lower) if self.periodic else None

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Return points inside the domain, wrapping periodic coordinates."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            raise PointOutsideChartError(f"point has dimension {pts.shape[1]}, chart has {self.dimension}")
        if not np.all(np.isfinite(pts)):
            raise PointOutsideChartError("point coordinates must be finite")
        if self.periodic:
            return self.lower + np.mod(pts - self.lower, self.upper - self.lower)
        inside = np.all((pts >= self.lower) & (pts <= self.upper), axis=1)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise PointOutsideChartError(f"point {bad.tolist()} lies outside the chart domain")
        return pts


class GridSpec(BaseModel):
    topology: Topology = Topology.PERIODIC_BOX
    # Box side lengths, or [r] for a polar ball
    extents: list[float] = Field(default_factory=lambda: [2 * math.pi])
    # Nodes per axis; polar: [radial per panel, height, angle1, angle2]
    resolution: list[int] = Field(default_factory=lambda: [8, 8, 8, 8])
    origin: Optional[list[float]] = None
    center: Optional[list[float]] = None
    # Radial panel breaks as fractions of r
    radial_breaks: Optional[list[float]] = None


@dataclass
class ChartGrid:
    dimension: int
    topology: Topology
    extents: np.ndarray
    resolution: tuple[int, ...]
    nodes: np.ndarray
    quadrature_weights: np.ndarray
    jacobian: np.ndarray
    center: Optional[np.ndarray] = None
    radii: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None
    radial_breaks: tuple[float, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def periodic(self) -> bool:
        return self.topology == Topology.PERIODIC_BOX

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> np.ndarray:
        if not self.periodic:
            raise InvalidSpecError("spacing is defined for periodic-box grids only")
        return self.extents / np.asarray(self.resolution, dtype=float)

    @property
    def volume_weights(self) -> np.ndarray:
        """Quadrature weight times coordinate Jacobian."""
        return self.quadrature_weights * self.jacobian

    @property
    def radius(self) -> float:
        return float(self.extents[0])


def _normalize_extents(spec: GridSpec, dimension: int) -> np.ndarray:
    extents = np.asarray(spec.extents, dtype=float)
    if extents.size == 1 and dimension > 1 and spec.topology == Topology.PERIODIC_BOX:
        extents = np.full(dimension, float(extents[0]))
    return extents


def _gauss_legendre_panels(n: int, breaks: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _make_box(spec: GridSpec) -> ChartGrid:
    resolution = tuple(int(n) for n in spec.resolution)
    dimension = len(resolution)
    extents = _normalize_extents(spec, dimension)
    if extents.shape[0] != dimension:
        raise InvalidSpecError("extents must have one entry per axis")
    origin = np.zeros(dimension) if spec.origin is None else np.asarray(spec.origin, dtype=float)
    axes = [origin[a] + extents[a] * np.arange(resolution[a]) / resolution[a] for a in range(dimension)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
    cell = float(np.prod(extents / np.asarray(resolution, dtype=float)))
    n = nodes.shape[0]
    return ChartGrid(
        dimension=dimension,
        topology=Topology.PERIODIC_BOX,
        extents=extents,
        resolution=resolution,
        nodes=nodes,
        quadrature_weights=np.full(n, cell),
        jacobian=np.ones(n),
        origin=origin,
    )


def _make_ball(spec: GridSpec) -> ChartGrid:
    resolution = tuple(int(n) for n in spec.resolution)
    if len(resolution) != 4:
        raise InvalidSpecError("polar-ball grids are four dimensional (resolution of length 4)")
    if len(spec.extents) != 1:
        raise InvalidSpecError("polar-ball extents must be [r]")
    r = float(spec.extents[0])
    fractions = [0.0] + sorted(float(b) for b in (spec.radial_breaks or [])) + [1.0]
    if any(not 0.0 < b < 1.0 for b in fractions[1:-1]) or len(set(fractions)) != len(fractions):
        raise InvalidSpecError("radial_breaks must be distinct fractions in (0, 1)")
    center = np.zeros(4) if spec.center is None else np.asarray(spec.center, dtype=float)
    if center.shape != (4,):
        raise InvalidSpecError("polar-ball center must have 4 coordinates")

    n_rho, n_t, n_a, n_b = resolution
    rho, w_rho = _gauss_legendre_panels(n_rho, [r * f for f in fractions])
    t, w_t = _gauss_legendre_panels(n_t, [0.0, 1.0])
    xi1 = 2 * math.pi * (np.arange(n_a) + 0.5) / n_a
    xi2 = 2 * math.pi * (np.arange(n_b) + 0.5) / n_b

    R, T, A, B = np.meshgrid(rho, t, xi1, xi2, indexing="ij")
    WR, WT, _, _ = np.meshgrid(w_rho, w_t, xi1, xi2, indexing="ij")
    cos_eta = np.sqrt(1.0 - T)
    sin_eta = np.sqrt(T)
    omega = np.stack(
        [cos_eta * np.cos(A), cos_eta * np.sin(A), sin_eta * np.cos(B), sin_eta * np.sin(B)], axis=-1
    ).reshape(-1, 4)
    radii = R.reshape(-1)
    nodes = center + radii[:, None] * omega
    # dOmega = (1/2) dt dxi1 dxi2 in Hopf coordinates with t = sin^2(eta)
    weights = (WR * 0.5 * WT).reshape(-1) * (2 * math.pi / n_a) * (2 * math.pi / n_b)
    return ChartGrid(
        dimension=4,
        topology=Topology.POLAR_BALL,
        extents=np.array([r]),
        resolution=resolution,
        nodes=nodes,
        quadrature_weights=weights,
        jacobian=radii ** 3,
        center=center,
        radii=radii,
        radial_breaks=tuple(r * f for f in fractions[1:-1]),
    )


def make_chart(spec: Union[GridSpec, dict[str, Any]]) -> ChartGrid:
    """Build a discretized chart with its nodes and quadrature weights."""
    if isinstance(spec, dict):
        spec = GridSpec.model_validate(spec)
    if any(e <= 0 for e in spec.extents):
        raise InvalidSpecError("extents must be positive")
    if any(n < 4 for n in spec.resolution):
        raise InvalidSpecError("resolution must be >= 4 per axis")
    grid = _make_ball(spec) if spec.topology == Topology.POLAR_BALL else _make_box(spec)
    logger.info(
        "[chart] grid | topology=%s nodes=%d resolution=%s",
        grid.topology.value,
        grid.size,
        "x".join(str(n) for n in grid.resolution),
    )
    return grid


def periodic_derivative(values: np.ndarray, grid: ChartGrid, alpha: Sequence[int]) -> np.ndarray:
    """Spectral partial derivative d^alpha of nodal values shaped grid.shape + trailing axes."""
    if not grid.periodic:
        raise NonPeriodicGridError("spectral derivatives need a periodic-box grid")
    d = grid.dimension
    axes = tuple(range(d))
    values = np.asarray(values, dtype=float)
    if values.shape[:d] != grid.shape:
        raise InvalidSpecError(f"values of shape {values.shape} do not match grid {grid.shape}")
    if not any(alpha):
        return values.copy()
    spectrum = np.fft.fftn(values, axes=axes)
    for axis, count in enumerate(alpha):
        if not count:
            continue
        n = grid.resolution[axis]
        k = 2 * math.pi * np.fft.fftfreq(n, d=grid.spacing[axis])
        if count % 2 and n % 2 == 0:
            k[n // 2] = 0.0
        shape = [1] * values.ndim
        shape[axis] = n
        spectrum = spectrum * ((1j * k) ** count).reshape(shape)
    return np.real(np.fft.ifftn(spectrum, axes=axes))


def node_values(f: Union["ScalarField", np.ndarray, float], grid: ChartGrid) -> np.ndarray:
    if hasattr(f, "values"):
        values = np.asarray(f.values(grid.nodes), dtype=float)
    else:
        values = np.broadcast_to(np.asarray(f, dtype=float), (grid.size,))
    if values.shape != (grid.size,):
        raise InvalidSpecError("field values must have one entry per node")
    if not np.all(np.isfinite(values)):
        raise NonFiniteFieldValueError("field is not finite at every node")
    return values


def volume_element(metric: "MetricField", grid: ChartGrid) -> np.ndarray:
    """sqrt(det g) at every node."""
    g = np.asarray(metric.jets(grid.nodes, order=0).g)
    return np.sqrt(np.linalg.det(g))


def integrate(
    f: Union["ScalarField", np.ndarray, float],
    grid: ChartGrid,
    metric: "MetricField",
    *,
    sqrt_det: Optional[np.ndarray] = None,
) -> float:
    """Sum of f * sqrt(det g) * weight over the nodes in lexicographic order."""
    values = node_values(f, grid)
    if sqrt_det is None:
        sqrt_det = volume_element(metric, grid)
    return compensated_sum(values * sqrt_det * grid.volume_weights)
