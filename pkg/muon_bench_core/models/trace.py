"""
Trace and report models

StepTrace is a plain frozen dataclass because one is built per optimizer step;
the report types are pydantic models so they serialize straight to JSON.
"""
import math
from dataclasses import astuple, dataclass, fields
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from muon_bench_core.models.enums import Theorem


@dataclass(frozen=True, slots=True)
class StepTrace:
    """
    Metrics recorded at iterate X_t for the step taken from it

    :param t: step index, starting at 1
    :param f_val: f(X_t)
    :param grad_fro: Frobenius norm of the exact gradient at X_t
    :param grad_nuc: nuclear norm of the exact gradient at X_t
    :param mom_err_fro: Frobenius norm of B_t - grad f(X_t)
    :param mom_err_nuc: nuclear norm of B_t - grad f(X_t)
    :param b_nuc: nuclear norm of the momentum B_t
    :param rank: numerical rank of B_t (0 when the step was skipped)
    :param eta_used: step size used at step t
    :param inner_grad_dir: <grad f(X_t), direction>
    :param skipped: momentum was rank zero, no move was made
    """
    t: int
    f_val: float
    grad_fro: float
    grad_nuc: float
    mom_err_fro: float
    mom_err_nuc: float
    b_nuc: float
    rank: int
    eta_used: float
    inner_grad_dir: float
    skipped: bool

    def as_row(self) -> Tuple:
        return astuple(self)

    def validate(self) -> Optional[str]:
        """Return a description of the first broken invariant, or None"""
        for name in ("grad_fro", "grad_nuc", "mom_err_fro", "mom_err_nuc", "b_nuc"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                return f"{name} must be finite and nonnegative, got {value!r}"
        for name in ("f_val", "eta_used", "inner_grad_dir"):
            if not math.isfinite(getattr(self, name)):
                return f"{name} must be finite"
        if not self.skipped and self.rank < 1:
            return f"rank must be >= 1 on a non-skipped step, got {self.rank}"
        return None


TRACE_COLUMNS: Tuple[str, ...] = tuple(f.name for f in fields(StepTrace))


@dataclass(frozen=True, slots=True)
class SlackReport:
    """Outcome of one per-step check; slack = rhs - lhs"""
    check: str
    t: int
    lhs: float
    rhs: float
    slack: float
    tolerance: float
    holds: bool
    bypassed: bool = False
    note: str = ""

    @classmethod
    def bypass(cls, check: str, t: int, note: str) -> "SlackReport":
        return cls(check, t, 0.0, 0.0, 0.0, 0.0, True, True, note)


class CertificationReport(BaseModel):
    """Largest observed constants for a problem"""
    trials: int
    max_ratio_fro: float
    max_ratio_dual: float
    variance_fro: float
    variance_fro_se: float
    variance_nuc: float
    variance_nuc_se: float
    min_gap_to_f_star: float


class BoundReport(BaseModel):
    """Seed-averaged left side of a theorem bound against its explicit right side"""
    theorem: Theorem
    lhs_empirical: float
    lhs_standard_error: float
    rhs_explicit: float
    slack: float
    statistical_tolerance: float
    holds: bool
    seeds: int
    config_digest: str
    constants: Dict[str, float] = Field(default_factory=dict)


class RateSlopePoint(BaseModel):
    horizon: int
    mean: float
    standard_error: float
    seeds: int


class RateSlopeReport(BaseModel):
    """Least-squares slope of log mean gradient norm against log T"""
    slope: float
    intercept: float
    points: List[RateSlopePoint]
    theoretical_slope: Optional[float] = None


@dataclass
class TraceFile:
    """
    One seed's trajectory together with its header

    :param digest: config digest of the run that produced it
    :param seed: trial seed
    :param rows: StepTrace rows for t = 1..T
    :param version: trace format version
    :param finalized: False for a file whose writer did not finish
    """
    digest: str
    seed: int
    rows: List[StepTrace]
    version: int = 1
    finalized: bool = True
    path: Optional[str] = None

    @property
    def horizon(self) -> int:
        return len(self.rows)
