from __future__ import annotations

import ast
from dataclasses import dataclass
import logging
import math
import operator
from typing import Any, Callable, Mapping, Optional

import jax.numpy as jnp
import numpy as np

from .chart import Domain
from .config import Provenance
from .jets import MetricField, ScalarField
from .utils import InvalidSpecError, UnknownMetricError


logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi


def _conformal_exp(u: Callable) -> Callable:
    def metric(x):
        return jnp.exp(2.0 * u(x)) * jnp.eye(x.shape[0])
    return metric


def euclidean(side: float = TWO_PI, dimension: int = 4) -> MetricField:
    return MetricField.from_closed_form(
        lambda x: jnp.eye(dimension) + 0.0 * x[0], label="euclidean", domain=Domain.box(side, dimension)
    )


def flat_ball(radius: float = 1.0) -> MetricField:
    return MetricField.from_closed_form(
        lambda x: jnp.eye(4) + 0.0 * x[0], label="flat-ball", domain=Domain.centered(radius)
    )


def conformally_flat(amplitude: float = 0.1) -> MetricField:
    """e^{2u} delta with u = amplitude * sin(x1)."""
    return MetricField.from_closed_form(
        _conformal_exp(lambda x: amplitude * jnp.sin(x[0])),
        label=f"conformally-flat(a={amplitude:g})",
        domain=Domain.box(TWO_PI),
    )


def conformally_flat_mixed(amplitude: float = 0.1) -> MetricField:
    def u(x):
        return amplitude * (jnp.sin(x[0]) * jnp.cos(x[1]) + 0.5 * jnp.cos(x[2] + x[3]))

    return MetricField.from_closed_form(
        _conformal_exp(u), label=f"conformally-flat-2(a={amplitude:g})", domain=Domain.box(TWO_PI)
    )


def round_s4(radius: float = 1.0) -> MetricField:
    """Stereographic chart of the round 4-sphere."""

    def metric(x):
        factor = 4.0 * radius ** 4 / (radius ** 2 + jnp.dot(x, x)) ** 2
        return factor * jnp.eye(4)

    return MetricField.from_closed_form(metric, label=f"round-s4(r={radius:g})", domain=Domain.centered(3.0 * radius))


def s2_x_s2(a: float = 1.0, b: float = 1.0) -> MetricField:
    """Product of two stereographic 2-spheres of radii a and b."""

    def metric(x):
        f1 = 4.0 * a ** 4 / (a ** 2 + x[0] ** 2 + x[1] ** 2) ** 2
        f2 = 4.0 * b ** 4 / (b ** 2 + x[2] ** 2 + x[3] ** 2) ** 2
        return jnp.diag(jnp.stack([f1, f1, f2, f2]))

    label = "s2xs2" if a == b == 1.0 else f"s2xs2(a={a:g},b={b:g})"
    return MetricField.from_closed_form(metric, label=label, domain=Domain.centered(3.0 * max(a, b)))


def h2_x_h2(a: float = 1.0, b: float = 1.1) -> MetricField:
    """Product of two Poincare disks of curvatures -1/a^2 and -1/b^2."""

    def metric(x):
        f1 = 4.0 * a ** 4 / (a ** 2 - x[0] ** 2 - x[1] ** 2) ** 2
        f2 = 4.0 * b ** 4 / (b ** 2 - x[2] ** 2 - x[3] ** 2) ** 2
        return jnp.diag(jnp.stack([f1, f1, f2, f2]))

    # Box corners stay inside both disks
    return MetricField.from_closed_form(
        metric, label=f"h2xh2(a={a:g},b={b:g})", domain=Domain.centered(0.7 * min(a, b))
    )


def bach_wave(epsilon: float = 0.2) -> MetricField:
    """Screw-symmetric deformation of the flat torus; homogeneous with constant |B| > 0."""
    if not 0 < abs(epsilon) < 1:
        raise InvalidSpecError("epsilon must satisfy 0 < |epsilon| < 1")

    def metric(x):
        c, s = jnp.cos(x[0]), jnp.sin(x[0])
        one, zero = jnp.ones_like(c), jnp.zeros_like(c)
        return jnp.array(
            [
                [one, zero, zero, zero],
                [zero, 1.0 + epsilon * c, epsilon * s, zero],
                [zero, epsilon * s, 1.0 - epsilon * c, zero],
                [zero, zero, zero, one],
            ]
        )

    return MetricField.from_closed_form(metric, label=f"bach-wave(eps={epsilon:g})", domain=Domain.box(TWO_PI))


@dataclass(frozen=True)
class CatalogEntry:
    builder: Callable[..., MetricField]
    description: str
    periodic: bool
    defaults: Mapping[str, float]


CATALOG: dict[str, CatalogEntry] = {
    "euclidean": CatalogEntry(euclidean, "flat metric on the (2 pi)^4 torus", True, {"side": TWO_PI}),
    "flat-ball": CatalogEntry(flat_ball, "flat metric on a coordinate ball", False, {"radius": 1.0}),
    "conformally-flat": CatalogEntry(conformally_flat, "e^{2u} delta, u = a sin x1", True, {"amplitude": 0.1}),
    "conformally-flat-2": CatalogEntry(
        conformally_flat_mixed, "e^{2u} delta, u = a (sin x1 cos x2 + cos(x3+x4)/2)", True, {"amplitude": 0.1}
    ),
    "round-s4": CatalogEntry(round_s4, "round 4-sphere, stereographic chart", False, {"radius": 1.0}),
    "s2xs2": CatalogEntry(s2_x_s2, "unit S2 x S2 product chart", False, {"a": 1.0, "b": 1.0}),
    "s2xs2-unequal": CatalogEntry(s2_x_s2, "S2(1) x S2(2) product chart", False, {"a": 1.0, "b": 2.0}),
    "h2xh2": CatalogEntry(h2_x_h2, "H2(1) x H2(1.1) product of Poincare disks", False, {"a": 1.0, "b": 1.1}),
    "bach-wave": CatalogEntry(bach_wave, "screw-wave torus with nowhere vanishing Bach tensor", True, {"epsilon": 0.2}),
}


def get_metric(name: str, params: Optional[Mapping[str, float]] = None) -> MetricField:
    entry = CATALOG.get(name)
    if entry is None:
        raise UnknownMetricError(f"unknown metric '{name}'; known: {', '.join(sorted(CATALOG))}")
    kwargs = dict(entry.defaults)
    for key, value in (params or {}).items():
        if key not in kwargs:
            raise InvalidSpecError(f"metric '{name}' has no parameter '{key}'")
        kwargs[key] = float(value)
    logger.info("[catalog] metric | name=%s params=%s", name, kwargs)
    return entry.builder(**kwargs)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

_FUNCTIONS: dict[str, Callable] = {
    "sin": jnp.sin,
    "cos": jnp.cos,
    "tan": jnp.tan,
    "exp": jnp.exp,
    "log": jnp.log,
    "sqrt": jnp.sqrt,
    "sinh": jnp.sinh,
    "cosh": jnp.cosh,
    "tanh": jnp.tanh,
}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def compile_expression(text: str, *, variables: tuple[str, ...] = ("x1", "x2", "x3", "x4")) -> Callable:
    """Compile an arithmetic expression in x1..x4 into a jnp function of the coordinate vector.

    Only numbers, the coordinates, pi, e, + - * / ** and the functions in _FUNCTIONS are accepted.
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise InvalidSpecError(f"cannot parse expression '{text}'") from exc

    def build(node: ast.AST) -> Callable[[Any], Any]:
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            value = float(node.value)
            return lambda x: value
        if isinstance(node, ast.Name):
            if node.id in variables:
                index = variables.index(node.id)
                return lambda x: x[index]
            if node.id in _CONSTANTS:
                value = _CONSTANTS[node.id]
                return lambda x: value
            raise InvalidSpecError(f"unknown name '{node.id}' in expression")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            op, left, right = _BINARY[type(node.op)], build(node.left), build(node.right)
            return lambda x: op(left(x), right(x))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op, operand = _UNARY[type(node.op)], build(node.operand)
            return lambda x: op(operand(x))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCTIONS:
            if len(node.args) != 1 or node.keywords:
                raise InvalidSpecError(f"{node.func.id} takes exactly one argument")
            fn, arg = _FUNCTIONS[node.func.id], build(node.args[0])
            return lambda x: fn(arg(x))
        raise InvalidSpecError(f"unsupported syntax in expression '{text}'")

    body = build(tree)
    return lambda x: jnp.asarray(body(x), dtype=jnp.float64) + 0.0 * x[0]


def scalar_from_expression(text: str) -> ScalarField:
    return ScalarField.from_fn(compile_expression(text), label=text)


def user_metric(
    components: Mapping[str, str],
    *,
    provenance: Provenance = Provenance.DUAL_NUMBER,
    domain: Optional[Domain] = None,
    label: str = "user",
) -> MetricField:
    """Metric from component expressions keyed "ij" (1-based, i <= j); missing entries follow the identity."""
    domain = domain or Domain.box(TWO_PI)
    d = domain.dimension
    compiled: dict[tuple[int, int], Callable] = {}
    for key, text in components.items():
        if len(key) != 2 or not key.isdigit():
            raise InvalidSpecError(f"component key '{key}' must look like '12'")
        i, j = sorted((int(key[0]) - 1, int(key[1]) - 1))
        if not (0 <= i < d and 0 <= j < d):
            raise InvalidSpecError(f"component '{key}' outside dimension {d}")
        compiled[(i, j)] = compile_expression(text)

    def metric(x):
        rows = []
        for a in range(d):
            row = []
            for b in range(d):
                fn = compiled.get((min(a, b), max(a, b)))
                default = 1.0 if a == b else 0.0
                row.append(fn(x) if fn is not None else jnp.asarray(default) + 0.0 * x[0])
            rows.append(jnp.stack(row))
        return jnp.stack(rows)

    return MetricField.from_closed_form(metric, label=label, domain=domain, provenance=provenance)


def product_bach_oracle(k1: float, k2: float, g: np.ndarray) -> np.ndarray:
    """Bach tensor of a product of surfaces with constant curvatures k1, k2: ((k1^2 - k2^2)/6) (g1 (+) -g2)."""
    c = (k1 ** 2 - k2 ** 2) / 6.0
    return c * np.diag([1.0, 1.0, -1.0, -1.0]) @ np.asarray(g)
