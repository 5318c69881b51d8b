"""
Muon Bench Core
Muon and spectral-descent optimizers with a verifier for their convergence bounds
"""

__version__ = "0.1.0"

from muon_bench_core.modules import matrix_core, optimizers, problems, schedules, verifier
from muon_bench_core.models import run_config, trace
from muon_bench_core.utils import runner, trace_io

__all__ = [
    "matrix_core",
    "optimizers",
    "problems",
    "schedules",
    "verifier",
    "run_config",
    "trace",
    "runner",
    "trace_io",
]
