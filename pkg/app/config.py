"""Configuration management using environment variables."""
import logging
import sys
from typing import Optional

from pydantic_settings import BaseSettings

from app.errors import ModelValidationError


LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Measures and replication
    MEASURE_TOLERANCE: float = 1e-12
    REPLICATION_TOLERANCE: float = 1e-9
    MARTINGALE_TOLERANCE: float = 1e-9
    FEASIBILITY_TOLERANCE: float = 1e-10

    # Barrier Newton solver
    KKT_TOLERANCE: float = 1e-8
    BARRIER_MU_START: float = 10.0
    BARRIER_MU_STOP: float = 1e-10
    BARRIER_MU_FACTOR: float = 0.1
    NEWTON_MAX_ITER: int = 200
    ENDOWMENT_TOLERANCE: float = 1e-9
    BOUNDARY_THRESHOLD: float = 1e-10

    # Budget inversion
    BRACKET_LOW: float = 1e-8
    BRACKET_HIGH: float = 1e8
    BRACKET_LIMIT_LOG2: int = 64
    BISECTION_RTOL: float = 1e-10
    BISECTION_MAX_ITER: int = 200

    # Inada grid check
    INADA_GRID_MIN: float = 1e-6
    INADA_GRID_MAX: float = 1e6
    INADA_GRID_POINTS: int = 100

    # Pricing
    INVARIANCE_TOLERANCE: float = 1e-7
    DEFINITIONAL_TOLERANCE: float = 1e-6
    UNIQUENESS_PROBE: float = 1e-3
    BASIS_TOLERANCE: float = 1e-7

    # Stability experiments
    VALUE_GAP_TOLERANCE: float = 1e-6
    OPTIMIZER_GAP_TOLERANCE: float = 1e-6
    PRICE_GAP_TOLERANCE: float = 1e-6
    TWO_FACTOR_TOLERANCE: float = 1e-7
    DIVERGENCE_RATIO: float = 10.0
    SWEEP_WORKERS: int = 1

    # Files
    DATA_DIR: str = "./data/models"

    # Logging: error | info | debug
    WEAKINFO_LOG: str = "info"

    class Config:
        env_file = ".env"
        case_sensitive = True


# Global settings instance
settings = Settings()


def configure_logging(level: Optional[str] = None) -> int:
    """
    Configure the root logger from WEAKINFO_LOG.

    Args:
        level: One of "error", "info", "debug" (default: settings.WEAKINFO_LOG)

    Returns:
        The numeric logging level that was applied
    """
    name = (level or settings.WEAKINFO_LOG).strip().lower()
    if name not in LOG_LEVELS:
        raise ModelValidationError(
            f"WEAKINFO_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}"
        )
    numeric = LOG_LEVELS[name]
    logging.basicConfig(
        level=numeric,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    return numeric
