"""
Exceptions for Muon Bench Core
"""
from typing import Optional


class MuonBenchError(Exception):
    """Base class for every error raised by the package"""


class DimensionError(MuonBenchError, ValueError):
    """Operands have incompatible shapes"""


class NonFiniteError(MuonBenchError, ValueError):
    """A matrix or gradient contains NaN or Inf"""


class RankZeroError(MuonBenchError):
    """No singular value survives the rank threshold"""


class NumericalDivergenceError(MuonBenchError):
    """Newton-Schulz iterate exploded"""


class ConfigurationError(MuonBenchError, ValueError):
    """Invalid hyperparameter, schedule or run configuration"""


class DivergedError(MuonBenchError):
    """Objective value left the admissible range during a run"""

    def __init__(self, message: str, step: int, f_val: float, seed: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.f_val = f_val
        self.seed = seed


class CertificationFailed(MuonBenchError):
    """A declared problem constant is contradicted by sampling"""

    def __init__(self, constant: str, declared: float, observed: float):
        super().__init__(
            f"declared {constant}={declared:.6g} violated: observed {observed:.6g}"
        )
        self.constant = constant
        self.declared = declared
        self.observed = observed


class _SidedViolation(MuonBenchError):
    def __init__(self, check: str, step: int, lhs: float, rhs: float):
        super().__init__(f"{check} violated at step {step}: lhs={lhs:.17g} rhs={rhs:.17g}")
        self.check = check
        self.step = step
        self.lhs = lhs
        self.rhs = rhs


class InequalityViolated(_SidedViolation):
    """A deterministic per-step inequality failed"""


class IdentityViolated(_SidedViolation):
    """A per-step identity failed beyond tolerance"""


class TraceFormatError(MuonBenchError):
    """Trace file is malformed or incomplete"""

    def __init__(self, message: str, path: Optional[str] = None, row: Optional[int] = None):
        location = ""
        if path is not None:
            location += f"{path}: "
        if row is not None:
            location += f"row {row}: "
        super().__init__(location + message)
        self.path = path
        self.row = row


class DigestMismatchError(MuonBenchError):
    """Traces produced by different configurations were mixed"""


class ScheduleMismatchError(MuonBenchError):
    """Traces were not produced under the schedule handed to a bound report"""


class InsufficientDataError(MuonBenchError):
    """Not enough horizons or seeds, or an undefined statistic"""
