from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chart import ChartGrid, integrate
from .config import ConformalConvention, CurvatureKind, SpectralSign, get_config
from .conformal import ConformalFactor, conformal_metric, mixed_values
from .curvature import invariants
from .jets import MetricField, ScalarField
from .utils import (
    BachVanishesError,
    DescentStalledError,
    HypothesisError,
    NoConvergenceError,
    NonPeriodicGridError,
    PositivityLostError,
    ZeroDenominatorError,
    compensated_sum,
)


logger = logging.getLogger(__name__)

Potential = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass
class DiscreteOperator:
    """L = 6 M^-1 K + diag(F): K the divergence-form stiffness, M = diag(sqrt det g)."""

    grid: ChartGrid
    matrix: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass: np.ndarray
    potential: np.ndarray
    metric_label: str
    t: float
    bach_min: Optional[float] = None
    overridden: bool = False

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def cell(self) -> float:
        return float(self.grid.quadrature_weights[0])

    @property
    def volume_weights(self) -> np.ndarray:
        """dV_g at the nodes."""
        return self.mass * self.grid.quadrature_weights

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def energy_matrix(self) -> sp.csr_matrix:
        """M L = 6K + M F; symmetric positive semidefinite plus potential."""
        return (6.0 * self.stiffness + sp.diags(self.mass * self.potential)).tocsr()

    def row_sum_residual(self) -> float:
        return float(np.max(np.abs(self.stiffness @ np.ones(self.size))))

    def self_adjointness_residual(self) -> float:
        weighted = self.energy_matrix()
        diff = abs(weighted - weighted.T)
        scale = max(float(abs(weighted).max()), 1.0)
        return float(diff.max()) / scale if diff.nnz else 0.0


@dataclass
class EigenResult:
    mu: float
    phi: np.ndarray
    iterations: int
    residual: float


@dataclass
class TrichotomyResult:
    sign: SpectralSign
    mu: float
    eigen: EigenResult
    # g~ = factor^2 g has F_{g~} = mu factor^-2
    factor: np.ndarray
    normalized_potential: np.ndarray
    consistent: bool


@dataclass
class NormalizationResult:
    u: np.ndarray
    v: np.ndarray
    K: float
    el_residual: float
    deviation: float
    mu_trial: float
    normalized_potential: np.ndarray
    history: list[float] = field(default_factory=list)
    descent_iterations: int = 0
    newton_iterations: int = 0


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _axis_operator(grid: ChartGrid, axis: int, one_d: sp.spmatrix) -> sp.csr_matrix:
    factors = [sp.identity(n, format="csr") for n in grid.resolution]
    factors[axis] = one_d
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return out


def _shift(n: int) -> sp.csr_matrix:
    """(S u)_i = u_{i+1} with periodic wrap."""
    return sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))


def difference_matrices(grid: ChartGrid) -> tuple[list, list, list]:
    """Per axis: forward difference, central difference and forward shift on the flattened grid."""
    forward, central, shifts = [], [], []
    for axis, (n, h) in enumerate(zip(grid.resolution, grid.spacing)):
        s = _shift(n)
        eye = sp.identity(n, format="csr")
        forward.append(_axis_operator(grid, axis, (s - eye) / h))
        central.append(_axis_operator(grid, axis, (s - s.T) / (2.0 * h)))
        shifts.append(_axis_operator(grid, axis, s))
    return forward, central, shifts


def stiffness_matrix(grid: ChartGrid, coefficients: np.ndarray) -> sp.csr_matrix:
    """Sum_ij of the weak form of a^{ij} d_i u d_j v; a = sqrt(det g) g^{ij} at the nodes."""
    forward, central, shifts = difference_matrices(grid)
    d = grid.dimension
    total = sp.csr_matrix((grid.size, grid.size))
    for i in range(d):
        a_ii = coefficients[:, i, i]
        half = 0.5 * (a_ii + shifts[i] @ a_ii)
        total = total + forward[i].T @ sp.diags(half) @ forward[i]
        for j in range(d):
            if j != i:
                total = total + central[i].T @ sp.diags(coefficients[:, i, j]) @ central[j]
    return total.tocsr()


def _potential_values(potential: Potential, grid: ChartGrid) -> np.ndarray:
    if callable(potential):
        values = np.asarray(potential(grid.nodes), dtype=float)
    else:
        values = np.broadcast_to(np.asarray(potential, dtype=float), (grid.size,)).copy()
    return values


def assemble_operator(
    g: MetricField,
    grid: ChartGrid,
    t: float,
    *,
    potential: Optional[Potential] = None,
    kind: CurvatureKind = CurvatureKind.SCALAR_BACH,
) -> DiscreteOperator:
    """Discretize -6 Delta_g + F on a periodic grid; `potential` replaces F when given."""
    if not grid.periodic:
        raise NonPeriodicGridError("the modified Laplacian is discretized on periodic-box grids")
    needs_bach = potential is None and t != 0 and kind == CurvatureKind.SCALAR_BACH
    inv = invariants(g, grid.nodes, bach=needs_bach)
    if potential is None:
        values = mixed_values(inv, t, kind) if t != 0 else inv.scalar.copy()
    else:
        values = _potential_values(potential, grid)
    coefficients = inv.sqrt_det[:, None, None] * inv.ginv
    stiffness = stiffness_matrix(grid, coefficients)
    mass = inv.sqrt_det
    matrix = (6.0 * sp.diags(1.0 / mass) @ stiffness + sp.diags(values)).tocsr()
    bach_min = float(np.min(inv.bach_norm)) if inv.bach_norm is not None else None
    logger.info(
        "[spectral] operator | nodes=%d t=%g nnz=%d override=%s", grid.size, t, matrix.nnz, potential is not None
    )
    return DiscreteOperator(
        grid=grid,
        matrix=matrix,
        stiffness=stiffness,
        mass=mass,
        potential=values,
        metric_label=g.label,
        t=float(t),
        bach_min=bach_min,
        overridden=potential is not None,
    )


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------


def _solver(matrix: sp.csr_matrix) -> Callable[[np.ndarray], np.ndarray]:
    """Factorized solve for small systems, conjugate gradients above direct_solver_max_nodes."""
    cfg = get_config()
    if matrix.shape[0] <= cfg.direct_solver_max_nodes:
        lu = spla.splu(matrix.tocsc())
        return lu.solve
    preconditioner = sp.diags(1.0 / matrix.diagonal())

    def solve(rhs: np.ndarray) -> np.ndarray:
        x, info = spla.cg(matrix, rhs, rtol=1e-13, atol=0.0, maxiter=20 * matrix.shape[0], M=preconditioner)
        if info != 0:
            raise NoConvergenceError(f"conjugate gradients stopped with info={info}")
        return x

    return solve


def _weighted_norm(u: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(u * u * weights)))


def principal_eigenpair(op: DiscreteOperator) -> EigenResult:
    """Smallest eigenvalue by shifted inverse iteration from the all-ones vector."""
    cfg = get_config()
    sigma = float(np.min(op.potential)) - 1.0
    energy = op.energy_matrix()
    shifted = (6.0 * op.stiffness + sp.diags(op.mass * (op.potential - sigma))).tocsr()
    solve = _solver(shifted)
    weights = op.volume_weights

    x = np.ones(op.size)
    x /= _weighted_norm(x, weights)
    residual = np.inf
    mu = float("nan")
    for iteration in range(1, cfg.eig_max_iter + 1):
        mu = float(x @ (energy @ x)) / float(x @ (op.mass * x))
        residual = _weighted_norm(op.apply(x) - mu * x, weights) / _weighted_norm(x, weights)
        if residual <= cfg.eig_tol:
            break
        x = solve(op.mass * x)
        x /= _weighted_norm(x, weights)
    else:
        raise NoConvergenceError(f"inverse iteration did not converge; residual {residual:.3e}")

    if np.sum(x) < 0:
        x = -x
    if np.min(x) <= 0:
        raise PositivityLostError("principal eigenfunction is not positive at every node")
    logger.info("[spectral] eigenpair | nodes=%d mu=%.10e iterations=%d", op.size, mu, iteration)
    return EigenResult(mu=mu, phi=x, iterations=iteration, residual=residual)


def classify(mu: float) -> SpectralSign:
    band = get_config().zero_tol
    if abs(mu) <= band:
        return SpectralSign.ZERO
    return SpectralSign.POSITIVE if mu > 0 else SpectralSign.NEGATIVE


def _bach_gate(op: DiscreteOperator) -> None:
    if op.overridden or op.t == 0 or op.bach_min is None:
        return
    floor = get_config().bach_floor
    if op.bach_min <= floor:
        raise BachVanishesError(f"grid-min |B| = {op.bach_min:.3e} is not above bach_floor {floor:.1e}")


def sign_trichotomy(
    g: MetricField,
    grid: ChartGrid,
    t: float,
    *,
    potential: Optional[Potential] = None,
    op: Optional[DiscreteOperator] = None,
) -> TrichotomyResult:
    """Sign class of the principal eigenvalue and the metric phi^2 g realizing it pointwise."""
    op = op or assemble_operator(g, grid, t, potential=potential)
    _bach_gate(op)
    eigen = principal_eigenpair(op)
    sign = classify(eigen.mu)
    normalized = op.apply(eigen.phi) / eigen.phi ** 3
    if sign == SpectralSign.ZERO:
        consistent = bool(np.max(np.abs(normalized)) <= get_config().zero_tol * float(np.max(eigen.phi ** -2)))
    else:
        consistent = bool(np.all(np.sign(normalized) == np.sign(eigen.mu)))
    logger.info("[spectral] trichotomy | sign=%s mu=%.6e consistent=%s", sign.value, eigen.mu, consistent)
    return TrichotomyResult(
        sign=sign,
        mu=eigen.mu,
        eigen=eigen,
        factor=eigen.phi,
        normalized_potential=normalized,
        consistent=consistent,
    )


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------


def yamabe_bach_functional(u: np.ndarray, op: DiscreteOperator) -> float:
    """int u L u dV / int u^4 dV with the discrete operator; homogeneous of degree -2."""
    u = np.asarray(u, dtype=float)
    weights = op.volume_weights
    denominator = compensated_sum(u ** 4 * weights)
    if denominator == 0.0:
        raise ZeroDenominatorError("int u^4 dV vanishes")
    return compensated_sum(u * op.apply(u) * weights) / denominator


def einstein_hilbert_functional(g: MetricField, grid: ChartGrid, t: float) -> float:
    """int F dV / Vol for the metric g itself."""
    inv = invariants(g, grid.nodes, bach=t != 0)
    values = mixed_values(inv, t) if t != 0 else inv.scalar
    volume = integrate(np.ones(grid.size), grid, g, sqrt_det=inv.sqrt_det)
    return integrate(values, grid, g, sqrt_det=inv.sqrt_det) / volume


def conformal_energy_identity(g: MetricField, u: ScalarField, grid: ChartGrid, t: float) -> tuple[float, float]:
    """int F_{u^2 g} dV_{u^2 g} against int F u^2 dV + 6 int |du|^2 dV."""
    tilde = conformal_metric(g, ConformalFactor(u, ConformalConvention.POWER))
    with_bach = t != 0
    inv_tilde = invariants(tilde, grid.nodes, bach=with_bach)
    f_tilde = mixed_values(inv_tilde, t) if with_bach else inv_tilde.scalar
    lhs = integrate(f_tilde, grid, tilde, sqrt_det=inv_tilde.sqrt_det)

    inv = invariants(g, grid.nodes, bach=with_bach)
    f_base = mixed_values(inv, t) if with_bach else inv.scalar
    jet = u.jets(g.domain.locate(grid.nodes), 1)
    value, grad = np.asarray(jet.value), np.asarray(jet.grad)
    grad_sq = np.einsum("ni,nij,nj->n", grad, inv.ginv, grad)
    rhs = integrate(f_base * value ** 2 + 6.0 * grad_sq, grid, g, sqrt_det=inv.sqrt_det)
    logger.info("[spectral] energy identity | lhs=%.10e rhs=%.10e", lhs, rhs)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Minimization and normalization
# ---------------------------------------------------------------------------


def _quartic_normalize(u: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return u / compensated_sum(u ** 4 * weights) ** 0.25


def _descend(
    op: DiscreteOperator, u: np.ndarray, max_iter: int = 200, armijo: float = 1e-4
) -> tuple[np.ndarray, list[float]]:
    """Projected gradient on the unit L^4 sphere of positive functions, Armijo backtracking."""
    weights = op.volume_weights
    u = _quartic_normalize(u, weights)
    value = yamabe_bach_functional(u, op)
    history = [value]
    step = 1.0
    floor = 1e-12 * float(np.max(u))
    for iteration in range(max_iter):
        # gradient along the constraint int u^4 dV = 1
        gradient = 2.0 * (op.apply(u) - value * u ** 3)
        slope = float(np.sum(gradient * gradient * weights))
        if slope <= (get_config().el_tol * (1.0 + abs(value))) ** 2:
            break
        trial_step = min(2.0 * step, 1.0)
        accepted = False
        while trial_step > 1e-16:
            candidate = _quartic_normalize(np.maximum(u - trial_step * gradient, floor), weights)
            candidate_value = yamabe_bach_functional(candidate, op)
            if candidate_value <= value - armijo * trial_step * slope:
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            if iteration == 0:
                raise DescentStalledError("no descent step satisfies the Armijo condition")
            break
        step = trial_step
        u, value = candidate, candidate_value
        history.append(value)
        if abs(history[-2] - value) <= 1e-12 * (1.0 + abs(value)):
            break
    logger.info("[spectral] descent | iterations=%d value=%.10e", len(history) - 1, value)
    return u, history


def _newton(op: DiscreteOperator, u: np.ndarray, lam: float, max_iter: int = 50) -> tuple[np.ndarray, float, float, int]:
    """Newton on L u = lam u^3, int u^4 dV = 1 through the Schur complement of the bordered system."""
    cfg = get_config()
    energy = op.energy_matrix()
    m = op.mass
    cell = op.cell
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        r1 = energy @ u - lam * m * u ** 3
        r2 = cell * float(np.sum(m * u ** 4)) - 1.0
        residual = float(np.max(np.abs(op.apply(u) - lam * u ** 3))) / (1.0 + abs(lam))
        if residual <= cfg.el_tol and abs(r2) <= cfg.el_tol:
            return u, lam, residual, iteration - 1
        block = (energy - sp.diags(3.0 * lam * m * u ** 2)).tocsr()
        solve = _solver(block)
        border = m * u ** 3
        x1 = solve(-r1)
        x2 = solve(border)
        d_lam = (-r2 - 4.0 * cell * float(border @ x1)) / (4.0 * cell * float(border @ x2))
        u = u + x1 + d_lam * x2
        lam = lam + d_lam
        if np.min(u) <= 0:
            raise PositivityLostError("Newton iterate lost positivity")
    raise NoConvergenceError(f"Euler-Lagrange Newton did not converge; residual {residual:.3e}")


def minimize_and_normalize(
    g: MetricField,
    grid: ChartGrid,
    t: float,
    *,
    potential: Optional[Potential] = None,
    op: Optional[DiscreteOperator] = None,
) -> NormalizationResult:
    """Minimize the Yamabe-type quotient and solve the Euler-Lagrange equation for F = -1."""
    op = op or assemble_operator(g, grid, t, potential=potential)
    _bach_gate(op)
    trial = principal_eigenpair(op)
    # With u = phi, int F u^2 dV + 6 int |du|^2 dV reduces to mu.
    if trial.mu > -get_config().zero_tol:
        raise HypothesisError(f"integral condition fails: trial value {trial.mu:.6e} is not negative")

    u, history = _descend(op, trial.phi)
    u, lam, el_residual, newton_iterations = _newton(op, u, history[-1])
    if lam >= 0:
        raise HypothesisError(f"Euler-Lagrange constant K = {lam:.6e} is not negative")

    scaled = np.sqrt(-lam) * u
    # F of the normalized metric through the same discrete operator
    normalized = op.apply(scaled) / scaled ** 3
    deviation = float(np.max(np.abs(normalized + 1.0)))
    logger.info(
        "[spectral] normalize | K=%.10e el_residual=%.3e deviation=%.3e newton=%d",
        lam, el_residual, deviation, newton_iterations,
    )
    return NormalizationResult(
        u=scaled,
        v=1.0 / scaled,
        K=lam,
        el_residual=el_residual,
        deviation=deviation,
        mu_trial=trial.mu,
        normalized_potential=normalized,
        history=history,
        descent_iterations=len(history) - 1,
        newton_iterations=newton_iterations,
    )
