"""
Process-wide settings for Muon Bench Core

Values can be overridden with MUON_BENCH_* environment variables,
e.g. MUON_BENCH_WORKERS=4 or MUON_BENCH_LOG_LEVEL=DEBUG.
"""
from typing import Literal, Tuple

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class BenchSettings(BaseSettings):
    """Defaults shared by the library, the runner and the CLI"""

    model_config = SettingsConfigDict(env_prefix="MUON_BENCH_", extra="ignore")

    log_level: str = "INFO"
    workers: int = Field(default=1, ge=1)

    rank_tol: float = Field(default=1e-12, ge=0.0, lt=1.0)

    ns_iters: int = Field(default=5, ge=1)
    ns_coeffs: Tuple[float, float, float] = (1.5, -0.5, 0.0)
    ns_prescale: Literal["frobenius", "spectral"] = "spectral"
    ns_divergence_threshold: float = 1e6

    divergence_threshold: float = 1e12

    trace_version: int = 1

    min_seeds_for_expectation: int = Field(default=16, ge=1)
    statistical_se_multiplier: float = Field(default=2.0, ge=0.0)
    thm31_eta_fraction: float = Field(default=0.5, gt=0.0, le=1.0)


settings = BenchSettings()
