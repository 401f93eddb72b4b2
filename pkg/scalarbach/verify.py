from __future__ import annotations

import logging
from typing import Callable, Sequence

import jax.numpy as jnp
import numpy as np
import scipy.linalg as sla

from .aubin import (
    DeformationSpec,
    aubin_integral_condition,
    conformal_error_scaling_check,
    deform_metric,
    deformed_curvature_closed,
    norm_domination,
    scalar_integral_identity,
)
from .catalog import get_metric, product_bach_oracle
from .chart import GridSpec, make_chart
from .config import BachFormula, ConformalConvention, CurvatureKind, Suite, get_config
from .conformal import ConformalFactor, bach_covariance_residual, conformal_metric, covariance_residual
from .curvature import bach_divergence, bach_from_jet, curvature_bundle, tensor_norm
from .jets import MetricField, ScalarField
from .profile import bump_profile, check_profile, smoothness_jumps
from .report import CheckResult, VerifyRecord
from .spectral import (
    assemble_operator,
    conformal_energy_identity,
    minimize_and_normalize,
    principal_eigenpair,
    sign_trichotomy,
)
from .utils import relative_residual


logger = logging.getLogger(__name__)

BACH_METRICS = ("conformally-flat", "conformally-flat-2", "bach-wave", "round-s4", "s2xs2-unequal")
# Integral identities are exact up to spectrally small quadrature error
IDENTITY_TOL = 1e-8


def sample_points(g: MetricField, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points in the middle 80% of the chart box."""
    lower, upper = g.domain.lower, g.domain.upper
    return lower + (0.1 + 0.8 * rng.random((count, g.dimension))) * (upper - lower)


def random_wave(
    rng: np.random.Generator, amplitude: float, *, offset: float = 0.0, axes: Sequence[int] = (0, 1, 2, 3)
) -> ScalarField:
    """offset + a sin(m . x + phase) with a random integer direction m along `axes` and a in [amplitude/2, amplitude]."""
    m = np.zeros(4)
    while not np.any(m):
        m[list(axes)] = rng.integers(-1, 2, size=len(axes))
    a = float(amplitude * (0.5 + 0.5 * rng.random()))
    phase = float(2 * np.pi * rng.random())
    direction = jnp.asarray(m)
    return ScalarField.from_fn(
        lambda x: offset + a * jnp.sin(jnp.dot(direction, x) + phase),
        label=f"{offset:g}+{a:.3f}sin({m.astype(int).tolist()}.x+{phase:.3f})",
    )


def _fail_count(flags) -> float:
    return float(sum(not ok for ok in flags))


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def bach_suite(rng: np.random.Generator, samples: int) -> list[CheckResult]:
    cfg = get_config()
    checks = []
    for name in BACH_METRICS:
        g = get_metric(name)
        worst, trace = 0.0, 0.0
        for p in sample_points(g, samples, rng):
            jet = g.jet(p, 4)
            ricci_form = bach_from_jet(jet, BachFormula.RICCI)
            weyl_form = bach_from_jet(jet, BachFormula.WEYL)
            worst = max(worst, relative_residual(weyl_form, ricci_form))
            ginv = np.linalg.inv(np.asarray(jet.g))
            trace = max(trace, abs(float(np.einsum("ij,ij->", ginv, ricci_form))) / (1.0 + tensor_norm(ricci_form, jet)))
        checks.append(CheckResult.of(f"bach/two-forms/{name}", worst, cfg.cross_tol))
        checks.append(CheckResult.of(f"bach/trace-free/{name}", trace, cfg.alg_tol))

    unit = get_metric("s2xs2")
    worst = max(tensor_norm(bach_from_jet(unit.jet(p, 4)), unit.jet(p, 0)) for p in sample_points(unit, samples, rng))
    checks.append(CheckResult.of("bach/einstein-flat/s2xs2", worst, cfg.bach_floor))

    for name, k1, k2 in (("s2xs2-unequal", 1.0, 0.25), ("h2xh2", -1.0, -1.0 / 1.21)):
        product = get_metric(name)
        worst = 0.0
        for p in sample_points(product, samples, rng):
            jet = product.jet(p, 4)
            worst = max(worst, relative_residual(bach_from_jet(jet), product_bach_oracle(k1, k2, np.asarray(jet.g))))
        checks.append(CheckResult.of(f"bach/oracle/{name}", worst, cfg.cross_tol))

    wave = get_metric("bach-wave")
    grid = make_chart(GridSpec(resolution=[8, 4, 4, 4]))
    checks.append(CheckResult.of("bach/divergence/bach-wave", float(np.max(bach_divergence(wave, grid))), cfg.div_tol))

    flat = curvature_bundle(get_metric("euclidean").jet(np.zeros(4), 2))
    checks.append(CheckResult.of("bach/flat-bundle/euclidean", float(np.max(np.abs(flat.riemann))), cfg.alg_tol))
    return checks


def covariance_suite(rng: np.random.Generator, samples: int) -> list[CheckResult]:
    cfg = get_config()
    checks = []
    for name in ("bach-wave", "conformally-flat"):
        g = get_metric(name)
        bach_worst, scalar_bach_worst, scalar_weyl_worst = 0.0, 0.0, 0.0
        for p in sample_points(g, samples, rng):
            factor = ConformalFactor(random_wave(rng, 0.2))
            phi = random_wave(rng, 0.3, offset=1.0)
            t = float(2.0 * rng.random())
            bach_worst = max(bach_worst, bach_covariance_residual(g, factor, p))
            scalar_bach_worst = max(scalar_bach_worst, covariance_residual(g, factor, t, phi, p))
            scalar_weyl_worst = max(
                scalar_weyl_worst, covariance_residual(g, factor, t, phi, p, kind=CurvatureKind.SCALAR_WEYL)
            )
        checks.append(CheckResult.of(f"covariance/bach/{name}", bach_worst, cfg.cross_tol))
        checks.append(CheckResult.of(f"covariance/scalar-bach/{name}", scalar_bach_worst, cfg.cross_tol))
        checks.append(CheckResult.of(f"covariance/scalar-weyl/{name}", scalar_weyl_worst, cfg.cross_tol))

    g = get_metric("bach-wave")
    p = sample_points(g, 1, rng)[0]
    u = random_wave(rng, 0.2, offset=1.0)
    power = covariance_residual(g, ConformalFactor(u, ConformalConvention.POWER), 1.0, ScalarField.constant(1.0), p)
    checks.append(CheckResult.of("covariance/power-convention/bach-wave", power, cfg.cross_tol))
    return checks


def aubin_suite(rng: np.random.Generator, samples: int) -> list[CheckResult]:
    cfg = get_config()
    checks = []
    f = ScalarField.from_fn(lambda x: 0.3 * jnp.sin(x[0] + x[1]), label="0.3sin(x1+x2)")
    spec = DeformationSpec(f)
    for name in ("bach-wave", "conformally-flat"):
        g = get_metric(name)
        deformed = deform_metric(g, spec)
        worst = 0.0
        for p in sample_points(g, samples, rng):
            closed = deformed_curvature_closed(g, spec, p)
            direct = curvature_bundle(deformed.jet(p, 2))
            worst = max(
                worst,
                relative_residual(closed.riemann_closed, direct.riemann),
                relative_residual(closed.ricci_closed, direct.ricci),
                relative_residual(closed.scalar_closed, direct.scalar),
                relative_residual(closed.gamma_closed, direct.gamma),
            )
        checks.append(CheckResult.of(f"aubin/closed-form/{name}", worst, IDENTITY_TOL))

    g = get_metric("bach-wave")
    grid = make_chart(GridSpec(resolution=[24, 24, 4, 4]))
    lhs, rhs = scalar_integral_identity(g, spec, grid)
    checks.append(CheckResult.of("aubin/scalar-integral/bach-wave", abs(lhs - rhs) / (1.0 + abs(rhs)), IDENTITY_TOL))

    worst = 0.0
    for p in sample_points(g, 5, rng):
        psi = random_wave(rng, 0.2, offset=1.0).exp(1.0)
        k = float(0.3 + 1.7 * rng.random())
        worst = max(worst, conformal_error_scaling_check(g, psi, k, p))
    checks.append(CheckResult.of("aubin/error-scaling/bach-wave", worst, cfg.cross_tol))
    return checks


def identity_suite(rng: np.random.Generator, samples: int) -> list[CheckResult]:
    checks = []
    g = get_metric("bach-wave")
    u = ScalarField.from_fn(lambda x: jnp.exp(0.1 * jnp.sin(x[0] + x[2])), label="exp(0.1sin(x1+x3))")
    grid = make_chart(GridSpec(resolution=[16, 4, 16, 4]))
    for t in (0.0, 1.0):
        lhs, rhs = conformal_energy_identity(g, u, grid, t)
        checks.append(CheckResult.of(f"identity/energy/t={t:g}", abs(lhs - rhs) / (1.0 + abs(rhs)), IDENTITY_TOL))

    f = ScalarField.from_fn(lambda x: 0.3 * jnp.sin(x[0] + x[1]), label="0.3sin(x1+x2)")
    box = make_chart(GridSpec(resolution=[24, 24, 4, 4]))
    for t in (0.0, 1.0):
        result = aubin_integral_condition(g, DeformationSpec(f), box, t)
        checks.append(CheckResult.of(f"identity/aubin-condition/t={t:g}", result.residual, IDENTITY_TOL))

    worst = 0.0
    for p in sample_points(g, samples, rng):
        jet_f = f.jet(p, 1)
        for rank in range(1, 5):
            worst = max(worst, norm_domination(g.jet(p, 0), jet_f, rank=rank, samples=10, rng=rng).max_ratio - 1.0)
    checks.append(CheckResult.of("identity/norm-domination", max(worst, 0.0), 1e-12))
    return checks


def spectral_suite(rng: np.random.Generator, samples: int) -> list[CheckResult]:
    cfg = get_config()
    checks = []
    g = get_metric("bach-wave")
    grid = make_chart(GridSpec(resolution=[6, 6, 6, 6]))

    op = assemble_operator(g, grid, 1.0)
    checks.append(CheckResult.of("spectral/self-adjoint", op.self_adjointness_residual(), cfg.alg_tol))
    checks.append(
        CheckResult.of(
            "spectral/constants-in-kernel",
            op.row_sum_residual() / (1.0 + float(abs(op.stiffness).max())),
            cfg.alg_tol,
        )
    )

    eigen = principal_eigenpair(op)
    root = np.sqrt(op.mass)
    symmetric = (6.0 * op.stiffness).toarray() / np.outer(root, root) + np.diag(op.potential)
    dense = float(sla.eigh(symmetric, eigvals_only=True, subset_by_index=[0, 0])[0])
    checks.append(CheckResult.of("spectral/dense-oracle", abs(eigen.mu - dense) / (1.0 + abs(dense)), cfg.cross_tol))

    # Factors vary in x1, x2 only, so four nodes resolve the other axes
    plane = make_chart(GridSpec(resolution=[16, 16, 4, 4]))
    for t, epsilon in ((0.0, 0.6), (1.0, 0.2)):
        wave = get_metric("bach-wave", {"epsilon": epsilon})
        base = sign_trichotomy(wave, plane, t).sign
        agree = []
        for _ in range(max(1, samples // 2)):
            tilde = conformal_metric(wave, ConformalFactor(random_wave(rng, 0.2, axes=(0, 1))))
            agree.append(sign_trichotomy(tilde, plane, t).sign == base)
        checks.append(CheckResult.of(f"spectral/trichotomy-invariance/t={t:g}", _fail_count(agree), 0.5))

    result = minimize_and_normalize(g, grid, 0.0)
    checks.append(CheckResult.of("spectral/normalize/el-residual", result.el_residual, cfg.el_tol))
    checks.append(CheckResult.of("spectral/normalize/deviation", result.deviation, cfg.norm_tol))
    return checks


def profile_suite(rng: np.random.Generator, samples: int) -> list[CheckResult]:
    checks = []
    for delta in (0.1, 0.2, 0.3):
        profile = bump_profile(delta)
        result = check_profile(profile)
        for name, ok in result.checks.items():
            checks.append(CheckResult.of(f"profile/{name}/delta={delta:g}", 0.0 if ok else 1.0, 0.5))
        checks.append(CheckResult.of(f"profile/c4-joins/delta={delta:g}", max(smoothness_jumps(profile)), 1e-6))
    return checks


SUITES: dict[Suite, Callable[[np.random.Generator, int], list[CheckResult]]] = {
    Suite.BACH: bach_suite,
    Suite.COVARIANCE: covariance_suite,
    Suite.AUBIN: aubin_suite,
    Suite.IDENTITY: identity_suite,
    Suite.SPECTRAL: spectral_suite,
    Suite.PROFILE: profile_suite,
}


def run_suite(suite: Suite, seed: int = 0, *, samples: int = 5) -> VerifyRecord:
    """Run one suite (or all of them) with a seeded generator."""
    rng = np.random.default_rng(seed)
    record = VerifyRecord(suite=suite.value, seed=seed)
    selected = list(SUITES) if suite == Suite.ALL else [suite]
    for key in selected:
        checks = SUITES[key](rng, samples)
        failed = [c.name for c in checks if not c.passed]
        logger.info("[verify] suite | name=%s checks=%d failed=%d", key.value, len(checks), len(failed))
        if failed:
            logger.warning("[verify] failed checks | %s", ", ".join(failed))
        record.checks.extend(checks)
    return record
