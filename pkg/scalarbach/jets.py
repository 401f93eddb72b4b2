from __future__ import annotations

from functools import lru_cache, partial
import itertools
import logging
import math
from typing import Callable, NamedTuple, Optional, Sequence, Union

import jax
import jax.numpy as jnp
import numpy as np

from .chart import ChartPoint, Domain, as_point
from .config import Provenance, get_config
from .utils import (
    InsufficientJetOrderError,
    JetInconsistentError,
    NonFiniteFieldValueError,
    PDViolationError,
)


logger = logging.getLogger(__name__)

MAX_METRIC_ORDER = 4
MAX_SCALAR_ORDER = 5
_DERIVATIVE_LETTERS = "abcdefgh"

Derivs = tuple


class MetricJet(NamedTuple):
    """Metric components and partials at a point; derivative indices come last."""

    g: jnp.ndarray
    dg: Optional[jnp.ndarray] = None
    d2g: Optional[jnp.ndarray] = None
    d3g: Optional[jnp.ndarray] = None
    d4g: Optional[jnp.ndarray] = None
    point: Optional[np.ndarray] = None

    @property
    def derivs(self) -> Derivs:
        out = [self.g]
        for arr in (self.dg, self.d2g, self.d3g, self.d4g):
            if arr is None:
                break
            out.append(arr)
        return tuple(out)

    @property
    def order(self) -> int:
        return len(self.derivs) - 1

    @property
    def dimension(self) -> int:
        return int(self.g.shape[-1])

    @classmethod
    def from_derivs(cls, derivs: Sequence, point: Optional[np.ndarray] = None) -> "MetricJet":
        padded = list(derivs) + [None] * (MAX_METRIC_ORDER + 1 - len(derivs))
        return cls(*padded[: MAX_METRIC_ORDER + 1], point=point)

    def truncated(self, order: int) -> "MetricJet":
        if order > self.order:
            raise InsufficientJetOrderError(f"jet has order {self.order}, {order} requested")
        return MetricJet.from_derivs(self.derivs[: order + 1], point=self.point)

    def stripped(self) -> "MetricJet":
        return self._replace(point=None)

    def take(self, index: Union[int, slice, np.ndarray]) -> "MetricJet":
        return MetricJet.from_derivs([d[index] for d in self.derivs])


class ScalarJet(NamedTuple):
    """Scalar value and partials at a point; higher arrays symmetric in all indices."""

    value: jnp.ndarray
    grad: Optional[jnp.ndarray] = None
    hess: Optional[jnp.ndarray] = None
    third: Optional[jnp.ndarray] = None
    fourth: Optional[jnp.ndarray] = None
    fifth: Optional[jnp.ndarray] = None
    point: Optional[np.ndarray] = None

    @property
    def derivs(self) -> Derivs:
        out = [self.value]
        for arr in (self.grad, self.hess, self.third, self.fourth, self.fifth):
            if arr is None:
                break
            out.append(arr)
        return tuple(out)

    @property
    def order(self) -> int:
        return len(self.derivs) - 1

    @classmethod
    def from_derivs(cls, derivs: Sequence, point: Optional[np.ndarray] = None) -> "ScalarJet":
        padded = list(derivs) + [None] * (MAX_SCALAR_ORDER + 1 - len(derivs))
        return cls(*padded[: MAX_SCALAR_ORDER + 1], point=point)

    def stripped(self) -> "ScalarJet":
        return self._replace(point=None)

    def take(self, index: Union[int, slice, np.ndarray]) -> "ScalarJet":
        return ScalarJet.from_derivs([d[index] for d in self.derivs])


# ---------------------------------------------------------------------------
# Jet algebra. Arrays carry an optional leading batch ("...") and derivative
# indices last.
# ---------------------------------------------------------------------------


def leibniz(u: Derivs, v: Derivs, order: int, u_idx: str = "", v_idx: str = "", out_idx: Optional[str] = None) -> Derivs:
    """Derivatives of a product u*v through `order` by the general product rule."""
    if len(u) <= order or len(v) <= order:
        raise InsufficientJetOrderError(f"product rule needs order {order} on both factors")
    out_idx = u_idx + v_idx if out_idx is None else out_idx
    result = []
    for m in range(order + 1):
        letters = _DERIVATIVE_LETTERS[:m]
        total = None
        for r in range(m + 1):
            for subset in itertools.combinations(range(m), r):
                rest = [q for q in range(m) if q not in subset]
                a = "".join(letters[q] for q in subset)
                b = "".join(letters[q] for q in rest)
                term = jnp.einsum(f"...{u_idx}{a},...{v_idx}{b}->...{out_idx}{letters}", u[r], v[m - r])
                total = term if total is None else total + term
        result.append(total)
    return tuple(result)


@lru_cache(maxsize=None)
def set_partitions(m: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """All set partitions of {0, ..., m-1}, blocks in increasing order."""
    if m == 0:
        return ((),)
    out = []
    for partition in set_partitions(m - 1):
        for b in range(len(partition)):
            out.append(partition[:b] + (partition[b] + (m - 1,),) + partition[b + 1:])
        out.append(partition + ((m - 1,),))
    return tuple(out)


def compose(h: Derivs, s: Derivs, order: int) -> Derivs:
    """Derivatives of H(s(x)) from H^(j)(s) and the jet of scalar s (Faa di Bruno)."""
    if len(h) <= order or len(s) <= order:
        raise InsufficientJetOrderError(f"composition needs order {order}")
    result = [h[0]]
    for m in range(1, order + 1):
        letters = _DERIVATIVE_LETTERS[:m]
        total = None
        for partition in set_partitions(m):
            blocks = ["".join(letters[q] for q in block) for block in partition]
            spec = "...," + ",".join(f"...{blk}" for blk in blocks) + f"->...{letters}"
            term = jnp.einsum(spec, h[len(partition)], *[s[len(block)] for block in partition])
            total = term if total is None else total + term
        result.append(total)
    return tuple(result)


def power_derivs(value: jnp.ndarray, exponent: float, order: int) -> Derivs:
    out, coeff = [], 1.0
    for j in range(order + 1):
        out.append(coeff * value ** (exponent - j))
        coeff *= exponent - j
    return tuple(out)


def log_derivs(value: jnp.ndarray, order: int) -> Derivs:
    out = [jnp.log(value)]
    for j in range(1, order + 1):
        out.append((-1) ** (j - 1) * math.factorial(j - 1) / value ** j)
    return tuple(out)


def exp_derivs(value: jnp.ndarray, scale: float, order: int) -> Derivs:
    base = jnp.exp(scale * value)
    return tuple(scale ** j * base for j in range(order + 1))


def gradient_derivs(f: Derivs, order: int) -> Derivs:
    """Jet of the covector df through `order`, component index first."""
    if len(f) <= order + 1:
        raise InsufficientJetOrderError(f"df to order {order} needs f to order {order + 1}")
    return tuple(f[m + 1] for m in range(order + 1))


def scale_derivs(f: Derivs, factor: float) -> Derivs:
    return tuple(factor * d for d in f)


def add_derivs(u: Derivs, v: Derivs) -> Derivs:
    return tuple(a + b for a, b in zip(u, v))


# ---------------------------------------------------------------------------
# Jet sources
# ---------------------------------------------------------------------------


def _ad_point_derivs(fn: Callable, order: int, x: jnp.ndarray) -> Derivs:
    out = [fn(x)]
    current = fn
    for _ in range(order):
        current = jax.jacfwd(current)
        out.append(current(x))
    return tuple(out)


class AutodiffSource:
    """Nested forward-mode differentiation of a jnp closed form."""

    def __init__(self, fn: Callable) -> None:
        self.fn = fn
        self._compiled: dict[int, Callable] = {}

    def __call__(self, points: np.ndarray, order: int) -> Derivs:
        compiled = self._compiled.get(order)
        if compiled is None:
            compiled = jax.jit(jax.vmap(partial(_ad_point_derivs, self.fn, order)))
            self._compiled[order] = compiled
        return compiled(jnp.asarray(points))


@lru_cache(maxsize=None)
def central_stencil(derivative: int, accuracy: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and unit-step weights of the central stencil for a derivative order."""
    count = 2 * ((derivative + 1) // 2) - 1 + accuracy
    half = (count - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    vander = np.vander(offsets, count, increasing=True).T
    rhs = np.zeros(count)
    rhs[derivative] = math.factorial(derivative)
    weights = np.linalg.solve(vander, rhs)
    keep = np.abs(weights) > 1e-14
    return offsets[keep], weights[keep]


class FiniteDifferenceSource:
    """Tensor-product central differences of a metric closed form with a Richardson check."""

    def __init__(self, metric_fn: Callable, *, step: float, accuracy: int = 6, tolerance: float = 1e-5) -> None:
        self.metric_fn = metric_fn
        self.step = step
        self.accuracy = accuracy
        self.tolerance = tolerance
        self._batched = jax.jit(jax.vmap(metric_fn))

    def _stencil(self, alpha: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        per_axis = []
        for axis, count in enumerate(alpha):
            if count:
                offsets, weights = central_stencil(count, self.accuracy)
                per_axis.append((axis, offsets, weights))
        d = len(alpha)
        shifts, weights = [], []
        for combo in itertools.product(*[range(len(o)) for _, o, _ in per_axis]):
            shift = np.zeros(d)
            weight = 1.0
            for (axis, offsets, w), c in zip(per_axis, combo):
                shift[axis] = offsets[c]
                weight *= w[c]
            shifts.append(shift)
            weights.append(weight)
        return np.asarray(shifts), np.asarray(weights)

    def _partials(self, points: np.ndarray, order: int, h: float) -> dict[tuple[int, ...], np.ndarray]:
        n, d = points.shape
        out: dict[tuple[int, ...], np.ndarray] = {}
        for m in range(1, order + 1):
            for combo in itertools.combinations_with_replacement(range(d), m):
                alpha = tuple(combo.count(a) for a in range(d))
                shifts, weights = self._stencil(alpha)
                pts = points[:, None, :] + h * shifts[None, :, :]
                values = np.asarray(self._batched(jnp.asarray(pts.reshape(-1, d)))).reshape(n, len(weights), d, d)
                out[alpha] = np.einsum("s,nsij->nij", weights, values) / h ** m
        return out

    def _assemble(self, points: np.ndarray, order: int, partials: dict) -> Derivs:
        n, d = points.shape
        derivs = [np.asarray(self._batched(jnp.asarray(points)))]
        for m in range(1, order + 1):
            arr = np.empty((n, d, d) + (d,) * m)
            for idx in itertools.product(range(d), repeat=m):
                alpha = tuple(idx.count(a) for a in range(d))
                arr[(slice(None), slice(None), slice(None)) + idx] = partials[alpha]
            derivs.append(arr)
        return tuple(derivs)

    def __call__(self, points: np.ndarray, order: int) -> Derivs:
        points = np.asarray(points, dtype=float)
        coarse = self._partials(points, order, self.step)
        fine = self._partials(points, order, 0.5 * self.step)
        for alpha, value in fine.items():
            mismatch = float(np.max(np.abs(value - coarse[alpha])))
            scale = 1.0 + float(np.max(np.abs(value)))
            if mismatch > self.tolerance * scale:
                raise JetInconsistentError(
                    f"finite-difference partial {alpha} changes by {mismatch:.3e} between h and h/2"
                )
        return self._assemble(points, order, fine)


def _chunked(source: Callable, points: np.ndarray, order: int, chunk_size: int) -> Derivs:
    n = points.shape[0]
    if n <= chunk_size:
        return tuple(np.asarray(d) for d in source(points, order))
    parts = []
    for start in range(0, n, chunk_size):
        chunk = points[start:start + chunk_size]
        pad = chunk_size - chunk.shape[0]
        if pad:
            chunk = np.concatenate([chunk, np.repeat(chunk[-1:], pad, axis=0)])
        out = source(chunk, order)
        parts.append([np.asarray(d)[: chunk_size - pad] for d in out])
    return tuple(np.concatenate([p[m] for p in parts]) for m in range(order + 1))


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


class MetricField:
    """A metric on a chart together with the machinery producing its jets."""

    def __init__(
        self,
        source: Callable[[np.ndarray, int], Derivs],
        *,
        label: str,
        provenance: Provenance,
        domain: Domain,
        metric_fn: Optional[Callable] = None,
        max_order: int = MAX_METRIC_ORDER,
        step: Optional[float] = None,
    ) -> None:
        self.source = source
        self.label = label
        self.provenance = provenance
        self.domain = domain
        self.metric_fn = metric_fn
        self.max_order = max_order
        self.step = step

    @classmethod
    def from_closed_form(
        cls,
        metric_fn: Callable,
        *,
        label: str,
        domain: Domain,
        provenance: Provenance = Provenance.CATALOG_ANALYTIC,
    ) -> "MetricField":
        if provenance == Provenance.FINITE_DIFFERENCE:
            cfg = get_config()
            source = FiniteDifferenceSource(metric_fn, step=cfg.fd_step, accuracy=cfg.fd_accuracy, tolerance=cfg.fd_tol)
            return cls(source, label=label, provenance=provenance, domain=domain, metric_fn=metric_fn, step=cfg.fd_step)
        return cls(AutodiffSource(metric_fn), label=label, provenance=provenance, domain=domain, metric_fn=metric_fn)

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def jets(self, points: np.ndarray, order: int = MAX_METRIC_ORDER, *, validate: bool = True) -> MetricJet:
        """Batched jets at chart points (wrapped into periodic domains)."""
        if order > self.max_order:
            raise InsufficientJetOrderError(f"{self.label} supports jets through order {self.max_order}")
        pts = self.domain.locate(points)
        derivs = _chunked(self.source, pts, order, get_config().chunk_size)
        jet = MetricJet.from_derivs(derivs)
        if validate:
            self._validate(jet)
        return jet

    def jet(self, p: Union[ChartPoint, Sequence[float]], order: int = MAX_METRIC_ORDER) -> MetricJet:
        point = as_point(p)
        batched = self.jets(point.coords[None, :], order)
        return batched.take(0)._replace(point=point.coords)

    def _validate(self, jet: MetricJet) -> None:
        for arr in jet.derivs:
            if not np.all(np.isfinite(arr)):
                raise NonFiniteFieldValueError(f"{self.label}: jet contains non-finite entries")
        g = np.asarray(jet.g)
        floor = get_config().pd_floor
        eig = np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))
        if np.min(eig) <= floor:
            raise PDViolationError(f"{self.label}: metric eigenvalue {np.min(eig):.3e} below pd_floor {floor:.1e}")


def jet_of_metric(field: MetricField, p: Union[ChartPoint, Sequence[float]], order: int = MAX_METRIC_ORDER) -> MetricJet:
    """Jet of the field at p through `order` (at most 4)."""
    if order > MAX_METRIC_ORDER:
        raise InsufficientJetOrderError("metric jets are capped at order 4")
    return field.jet(p, order)


class ScalarField:
    """A scalar function on a chart with jets through order 5."""

    def __init__(
        self,
        source: Callable[[np.ndarray, int], Derivs],
        *,
        label: str,
        fn: Optional[Callable] = None,
        max_order: int = MAX_SCALAR_ORDER,
    ) -> None:
        self.source = source
        self.label = label
        self.fn = fn
        self.max_order = max_order

    @classmethod
    def from_fn(cls, fn: Callable, *, label: str) -> "ScalarField":
        return cls(AutodiffSource(fn), label=label, fn=fn)

    @classmethod
    def constant(cls, c: float, *, dimension: int = 4) -> "ScalarField":
        def source(points: np.ndarray, order: int) -> Derivs:
            n = points.shape[0]
            return tuple(
                np.full(n, float(c)) if m == 0 else np.zeros((n,) + (dimension,) * m) for m in range(order + 1)
            )

        return cls(source, label=f"const({c:g})", fn=lambda x: jnp.asarray(float(c)) + 0.0 * x[0])

    def jets(self, points: np.ndarray, order: int = 4) -> ScalarJet:
        if order > self.max_order:
            raise InsufficientJetOrderError(f"{self.label} supports jets through order {self.max_order}")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        derivs = _chunked(self.source, pts, order, get_config().chunk_size)
        for arr in derivs:
            if not np.all(np.isfinite(arr)):
                raise NonFiniteFieldValueError(f"{self.label}: jet contains non-finite entries")
        return ScalarJet.from_derivs(derivs)

    def jet(self, p: Union[ChartPoint, Sequence[float]], order: int = 4) -> ScalarJet:
        point = as_point(p)
        return self.jets(point.coords[None, :], order).take(0)._replace(point=point.coords)

    def values(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.jets(points, 0).value)

    def map(self, outer: Callable[[jnp.ndarray, int], Derivs], *, label: str, fn: Optional[Callable] = None) -> "ScalarField":
        """Compose with a univariate function given by its derivative list."""
        inner = self

        def source(points: np.ndarray, order: int) -> Derivs:
            s = inner.source(points, order)
            return _compose_batch(outer, tuple(jnp.asarray(d) for d in s), order)

        return ScalarField(source, label=label, fn=fn, max_order=self.max_order)

    def times(self, other: "ScalarField", *, label: Optional[str] = None) -> "ScalarField":
        left, right = self, other

        def source(points: np.ndarray, order: int) -> Derivs:
            return _product_batch(tuple(left.source(points, order)), tuple(right.source(points, order)), order)

        fn = None
        if left.fn is not None and right.fn is not None:
            fn = lambda x: left.fn(x) * right.fn(x)
        return ScalarField(source, label=label or f"({left.label})*({right.label})", fn=fn,
                           max_order=min(left.max_order, right.max_order))

    def scaled(self, factor: float, *, label: Optional[str] = None) -> "ScalarField":
        inner = self

        def source(points: np.ndarray, order: int) -> Derivs:
            return scale_derivs(tuple(jnp.asarray(d) for d in inner.source(points, order)), factor)

        fn = (lambda x: factor * inner.fn(x)) if inner.fn is not None else None
        return ScalarField(source, label=label or f"{factor:g}*({inner.label})", fn=fn, max_order=inner.max_order)

    def plus(self, other: "ScalarField", *, label: Optional[str] = None) -> "ScalarField":
        left, right = self, other

        def source(points: np.ndarray, order: int) -> Derivs:
            return add_derivs(tuple(jnp.asarray(d) for d in left.source(points, order)),
                              tuple(jnp.asarray(d) for d in right.source(points, order)))

        fn = (lambda x: left.fn(x) + right.fn(x)) if left.fn is not None and right.fn is not None else None
        return ScalarField(source, label=label or f"({left.label})+({right.label})", fn=fn,
                           max_order=min(left.max_order, right.max_order))

    def sqrt(self) -> "ScalarField":
        fn = (lambda x, f=self.fn: jnp.sqrt(f(x))) if self.fn is not None else None
        return self.map(lambda v, order: power_derivs(v, 0.5, order), label=f"sqrt({self.label})", fn=fn)

    def log(self) -> "ScalarField":
        fn = (lambda x, f=self.fn: jnp.log(f(x))) if self.fn is not None else None
        return self.map(log_derivs, label=f"log({self.label})", fn=fn)

    def exp(self, scale: float = 1.0) -> "ScalarField":
        fn = (lambda x, f=self.fn: jnp.exp(scale * f(x))) if self.fn is not None else None
        return self.map(lambda v, order: exp_derivs(v, scale, order), label=f"exp({scale:g}*{self.label})", fn=fn)

    def power(self, exponent: float) -> "ScalarField":
        fn = (lambda x, f=self.fn: f(x) ** exponent) if self.fn is not None else None
        return self.map(lambda v, order: power_derivs(v, exponent, order), label=f"({self.label})^{exponent:g}", fn=fn)


@partial(jax.jit, static_argnums=(0, 2))
def _compose_batch(outer: Callable, s: Derivs, order: int) -> Derivs:
    return compose(outer(s[0], order), s, order)


@partial(jax.jit, static_argnums=(2,))
def _product_batch(u: Derivs, v: Derivs, order: int) -> Derivs:
    return leibniz(u, v, order)


# ---------------------------------------------------------------------------
# Metric algebra on fields
# ---------------------------------------------------------------------------


@partial(jax.jit, static_argnums=(2,))
def scalar_times_metric(phi: Derivs, g: Derivs, order: int) -> Derivs:
    return leibniz(phi, g, order, "", "ij", "ij")


@partial(jax.jit, static_argnums=(1,))
def gradient_square(f: Derivs, order: int) -> Derivs:
    """Jet of df (x) df from the jet of f (one order higher)."""
    df = gradient_derivs(f, order)
    return leibniz(df, df, order, "i", "j", "ij")
