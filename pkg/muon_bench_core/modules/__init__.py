"""
Numerical modules of Muon Bench Core

- matrix_core: norms, reduced SVD, polar factor, Newton-Schulz
- optimizers: heavy-ball Muon, momentum-sum Muon, spectral descent
- problems: synthetic objectives with certified constants
- schedules: theorem-prescribed hyperparameters
- verifier: per-step checks and bound reports
"""

from muon_bench_core.modules import matrix_core, problems, optimizers, schedules, verifier

__all__ = ["matrix_core", "optimizers", "problems", "schedules", "verifier"]
