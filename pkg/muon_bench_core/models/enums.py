"""
Enumerations shared across the benchmark
"""
from enum import Enum


class UpdateRule(str, Enum):
    """Supported matrix update rules"""
    MUON_HEAVY_BALL = "muon_heavy_ball"
    MUON_SUM = "muon_sum"
    SPECTRAL_DESCENT = "spectral_descent"

    @property
    def is_muon(self) -> bool:
        return self in (UpdateRule.MUON_HEAVY_BALL, UpdateRule.MUON_SUM)


class ProblemKind(str, Enum):
    """Synthetic objective families"""
    NOISY_QUADRATIC = "noisy_quadratic"
    LEAST_SQUARES = "least_squares"
    LOGISTIC_MATRIX = "logistic_matrix"


class NoiseModel(str, Enum):
    """Stochastic-gradient noise models"""
    GAUSSIAN_ADDITIVE = "gaussian_additive"
    NONE = "none"


class Theorem(str, Enum):
    """Schedules and bound reports derived from the convergence results"""
    THM22_BATCH_FREE = "thm22-batch-free"
    THM22_BIG_BATCH = "thm22-big-batch"
    THM22_POWER_BATCH = "thm22-power-batch"
    THM31 = "thm31"

    @property
    def is_thm22(self) -> bool:
        return self is not Theorem.THM31


class Orthogonalizer(str, Enum):
    """How Muon turns momentum into a semi-orthogonal direction"""
    SVD = "svd"
    NEWTON_SCHULZ = "newton_schulz"


class InlineCheck(str, Enum):
    """Per-step checks that need matrices the trace file does not keep"""
    MUON_INNER_PRODUCT = "muon_inner_product"
    MOMENTUM_ERROR_RECURSION = "momentum_error_recursion"
    SPECTRAL_IDENTITIES = "spectral_identities"
    NORM_EQUIVALENCE = "norm_equivalence"
