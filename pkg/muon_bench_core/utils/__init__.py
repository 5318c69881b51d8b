"""
Utilities for Muon Bench Core: trace files, the experiment runner and text reports
"""

from muon_bench_core.utils.trace_io import read_trace, read_trace_dir, write_trace
from muon_bench_core.utils.runner import (
    ExperimentRunner,
    compare_orthogonalizers,
    run_sweep,
)

__all__ = [
    "read_trace",
    "read_trace_dir",
    "write_trace",
    "ExperimentRunner",
    "compare_orthogonalizers",
    "run_sweep",
]
