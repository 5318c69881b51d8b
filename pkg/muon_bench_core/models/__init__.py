"""
Data models for Muon Bench Core
"""

from muon_bench_core.models.enums import (
    InlineCheck,
    NoiseModel,
    Orthogonalizer,
    ProblemKind,
    Theorem,
    UpdateRule,
)
from muon_bench_core.models.run_config import (
    OptimizerConfig,
    ProblemConfig,
    RunConfig,
    RunSection,
    load_run_config,
    parse_run_config,
)
from muon_bench_core.models.trace import (
    TRACE_COLUMNS,
    BoundReport,
    CertificationReport,
    RateSlopePoint,
    RateSlopeReport,
    SlackReport,
    StepTrace,
    TraceFile,
)

__all__ = [
    "InlineCheck",
    "NoiseModel",
    "Orthogonalizer",
    "ProblemKind",
    "Theorem",
    "UpdateRule",
    "OptimizerConfig",
    "ProblemConfig",
    "RunConfig",
    "RunSection",
    "load_run_config",
    "parse_run_config",
    "TRACE_COLUMNS",
    "BoundReport",
    "CertificationReport",
    "RateSlopePoint",
    "RateSlopeReport",
    "SlackReport",
    "StepTrace",
    "TraceFile",
]
