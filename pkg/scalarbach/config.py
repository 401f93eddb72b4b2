from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Topology(str, Enum):
    """Chart grid topologies."""
    PERIODIC_BOX = "periodic-box"
    POLAR_BALL = "polar-ball"


class Provenance(str, Enum):
    """How a metric field produces its jets."""
    CATALOG_ANALYTIC = "catalog-analytic"
    DUAL_NUMBER = "dual-number"
    FINITE_DIFFERENCE = "finite-difference"


class BachFormula(str, Enum):
    """Bach tensor formula selection."""
    WEYL = "weyl"
    RICCI = "ricci"
    BOTH = "both"


class ConformalConvention(str, Enum):
    """Conformal factor conventions: e^{2u}g or u^2 g."""
    EXPONENTIAL = "exponential"
    POWER = "power"


class CurvatureKind(str, Enum):
    """Mixed curvature scalars."""
    SCALAR_WEYL = "scalar-weyl"
    SCALAR_BACH = "scalar-bach"


class SpectralSign(str, Enum):
    """Sign class of the principal eigenvalue."""
    POSITIVE = "positive"
    NEGATIVE = "negative"
    ZERO = "zero"


class Command(str, Enum):
    """Subcommands accepted by a run config."""
    CURVATURE = "curvature"
    DEFORM = "deform"
    CONFORMAL = "conformal"
    EIGEN = "eigen"
    NORMALIZE = "normalize"
    CONSTRUCT = "construct"
    VERIFY = "verify"


class DeformReport(str, Enum):
    """Report kinds of the deform subcommand."""
    CURVATURE = "curvature"
    BACH_ERROR = "bach-error"
    IDENTITY = "identity"


class ConformalCheck(str, Enum):
    """Checks of the conformal subcommand."""
    LAWS = "laws"
    COVARIANCE = "covariance"
    BACH = "bach"


class Suite(str, Enum):
    """Verification suites."""
    BACH = "bach"
    COVARIANCE = "covariance"
    AUBIN = "aubin"
    IDENTITY = "identity"
    SPECTRAL = "spectral"
    PROFILE = "profile"
    ALL = "all"


class AppConfig(BaseSettings):
    model_config = SettingsConfigDict(env_file='.env', env_file_encoding='utf-8', env_prefix='SCALARBACH_')

    # Jet validation
    pd_floor: float = 1e-10
    fd_tol: float = 1e-5
    fd_step: float = 0.05
    fd_accuracy: int = 6

    # Pointwise identities
    alg_tol: float = 1e-9
    cross_tol: float = 1e-6
    cross_tol_fd: float = 1e-3
    div_tol: float = 1e-5
    route_tol: float = 1e-10
    phi_tol: float = 1e-6

    # Spectral
    eig_tol: float = 1e-9
    eig_max_iter: int = 10000
    zero_tol: float = 1e-6
    bach_floor: float = 1e-8
    norm_tol: float = 1e-3
    el_tol: float = 1e-8
    direct_solver_max_nodes: int = 20000

    # Runtime
    chunk_size: int = 256
    threads: int = 1
    output_dir: str = "outputs"

    @field_validator(
        "pd_floor", "fd_tol", "fd_step", "alg_tol", "cross_tol", "cross_tol_fd", "div_tol",
        "route_tol", "phi_tol", "eig_tol", "zero_tol", "bach_floor", "norm_tol", "el_tol",
    )
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tolerances must be positive")
        return value

    @field_validator("fd_accuracy")
    @classmethod
    def _accuracy(cls, value: int) -> int:
        if value < 6 or value % 2:
            raise ValueError("fd_accuracy must be an even order >= 6")
        return value

    @field_validator("eig_max_iter", "chunk_size", "threads", "direct_solver_max_nodes")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value


_active: Optional[AppConfig] = None


def get_config() -> AppConfig:
    """Process-wide settings, loaded from env and .env on first use."""
    global _active
    if _active is None:
        _active = AppConfig()
    return _active


def set_config(config: Optional[AppConfig]) -> None:
    global _active
    _active = config
