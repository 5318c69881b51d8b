"""
Module: Schedules
Hyperparameters prescribed by the convergence theorems

thm22 (heavy-ball Muon, Frobenius smoothness) comes in three flavours:
batch-free (beta tied to T), big batch (B = T) and power batch (B = T^p).
thm31 (spectral descent, dual-norm smoothness) caps eta for beta < 1/2.
Invalid thm31 inputs are reported in the returned params, not raised.
"""
import math
from typing import Dict, Optional

from loguru import logger
from pydantic import BaseModel, Field

from muon_bench_core.config import settings
from muon_bench_core.exceptions import ConfigurationError
from muon_bench_core.models.enums import Theorem


class ScheduleParams(BaseModel):
    """
    Theorem-derived (alpha, beta, eta, batch) with a validity flag

    alpha is always 1 - beta.
    """
    theorem: Theorem
    alpha: float = Field(ge=0.0, le=1.0)
    beta: float = Field(ge=0.0, lt=1.0)
    eta: float = Field(ge=0.0)
    batch: int = Field(ge=1)
    valid: bool = True
    reason: str = ""


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value) or value <= 0:
            raise ConfigurationError(f"{name} must be positive, got {value}")


def _check_common(R: float, L: float, n: int, T: int) -> None:
    _require_positive(R=R, L=L)
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ConfigurationError(f"beta must lie in [0, 1), got {beta}")


def _thm22_weight(beta: float, n: int) -> float:
    return 10.0 / (1.0 - beta) + 2.0 * n


def _thm22_eta(R: float, L: float, n: int, T: int, beta: float) -> float:
    return math.sqrt(4.0 * R / (_thm22_weight(beta, n) * T * L))


def thm22_batch_free(R: float, L: float, sigma: float, n: int, T: int) -> ScheduleParams:
    """
    Batch-free schedule: alpha = min(sqrt(RL) / (sigma sqrt(T)), 1), beta = 1 - alpha, B = 1

    eta = sqrt(4R / ((10/alpha + 2n) T L)). sigma = 0 gives alpha = 1.
    """
    _check_common(R, L, n, T)
    if sigma < 0.0:
        raise ConfigurationError(f"sigma must be nonnegative, got {sigma}")
    alpha = 1.0 if sigma == 0.0 else min(math.sqrt(R * L) / (sigma * math.sqrt(T)), 1.0)
    beta = 1.0 - alpha
    eta = _thm22_eta(R, L, n, T, beta)
    logger.debug("thm22 batch-free: alpha={:.6g}, eta={:.6g}", alpha, eta)
    return ScheduleParams(
        theorem=Theorem.THM22_BATCH_FREE, alpha=alpha, beta=beta, eta=eta, batch=1
    )


def thm22_big_batch(R: float, L: float, n: int, T: int, beta: float) -> ScheduleParams:
    """Arbitrary constant beta with batch B = T"""
    _check_common(R, L, n, T)
    _check_beta(beta)
    return ScheduleParams(
        theorem=Theorem.THM22_BIG_BATCH,
        alpha=1.0 - beta,
        beta=beta,
        eta=_thm22_eta(R, L, n, T, beta),
        batch=T,
    )


def thm22_power_batch(
    R: float, L: float, n: int, T: int, beta: float, power: float
) -> ScheduleParams:
    """
    Constant beta with batch B = ceil(T^power), power in (0, 1)

    T^power is rounded to 9 decimals first so exact powers (100^0.5) are not bumped up.
    """
    _check_common(R, L, n, T)
    _check_beta(beta)
    if not 0.0 < power < 1.0:
        raise ConfigurationError(f"power must lie in the open interval (0, 1), got {power}")
    batch = max(1, math.ceil(round(T**power, 9)))
    return ScheduleParams(
        theorem=Theorem.THM22_POWER_BATCH,
        alpha=1.0 - beta,
        beta=beta,
        eta=_thm22_eta(R, L, n, T, beta),
        batch=batch,
    )


def thm31_eta_cap(L: float, beta: float, batch: int = 1) -> ScheduleParams:
    """
    Largest admissible spectral-descent step: (1 / 8L) sqrt((1 - 2 beta) / (2 beta))

    :param L: dual-norm Lipschitz constant
    :param beta: momentum in (0, 1); beta >= 1/2 yields valid=False
    :param batch: carried into the params unchanged
    """
    _require_positive(L=L)
    if batch < 1:
        raise ConfigurationError(f"batch must be >= 1, got {batch}")
    _check_beta(beta)
    if beta == 0.0:
        return ScheduleParams(
            theorem=Theorem.THM31,
            alpha=1.0,
            beta=0.0,
            eta=0.0,
            batch=batch,
            valid=False,
            reason="eta cap is unbounded at beta=0; thm31 takes beta in (0, 1)",
        )
    if beta >= 0.5:
        return ScheduleParams(
            theorem=Theorem.THM31,
            alpha=1.0 - beta,
            beta=beta,
            eta=0.0,
            batch=batch,
            valid=False,
            reason=f"eta cap needs beta < 1/2, got beta={beta}; the cap is not positive",
        )
    cap = math.sqrt((1.0 - 2.0 * beta) / (2.0 * beta)) / (8.0 * L)
    return ScheduleParams(theorem=Theorem.THM31, alpha=1.0 - beta, beta=beta, eta=cap, batch=batch)


def thm31_schedule(
    L: float, beta: float, batch: int = 1, eta_fraction: Optional[float] = None
) -> ScheduleParams:
    """Experiment schedule: eta = eta_fraction * cap (default fraction from settings)"""
    fraction = settings.thm31_eta_fraction if eta_fraction is None else eta_fraction
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"eta_fraction must lie in (0, 1], got {fraction}")
    capped = thm31_eta_cap(L, beta, batch)
    if not capped.valid:
        return capped
    return capped.model_copy(update={"eta": fraction * capped.eta})


def thm22_balance_point(R: float, L: float, n: int, T: int, beta: float) -> float:
    """
    2 sqrt((10/(1-beta) + 2n) R T L)

    At the prescribed eta each of the two eta-dependent terms equals this value.
    """
    _check_common(R, L, n, T)
    _check_beta(beta)
    return 2.0 * math.sqrt(_thm22_weight(beta, n) * R * T * L)


def thm22_deterministic_terms(
    eta: float, R: float, L: float, n: int, T: int, beta: float
) -> Dict[str, float]:
    """
    The two eta-dependent parts of the thm22 sum bound

    :return: {"initial_gap": 4R/eta, "step_length": (10/(1-beta) + 2n) eta L T}
    """
    _require_positive(eta=eta)
    _check_common(R, L, n, T)
    _check_beta(beta)
    return {
        "initial_gap": 4.0 * R / eta,
        "step_length": _thm22_weight(beta, n) * eta * L * T,
    }


def thm22_explicit_sum(
    eta: float,
    R: float,
    L: float,
    sigma: float,
    n: int,
    T: int,
    beta: float,
    batch: int,
    sqrt_n_momentum_drift: bool = False,
) -> float:
    """
    Explicit right side of sum_t ||grad f(X_t)||_F in the thm22 bound

    4R/eta + 10 sigma/((1-beta) sqrt B) + 10 T sqrt(1-beta) sigma/sqrt B
        + 10 T eta L/(1-beta) + 2 eta n L T

    :param sqrt_n_momentum_drift: scale the momentum-drift term by sqrt(n), since
        ||X_{t+1} - X_t||_F = eta sqrt(r) rather than eta
    """
    _require_positive(eta=eta)
    _check_common(R, L, n, T)
    _check_beta(beta)
    drift = 10.0 * T * eta * L / (1.0 - beta)
    if sqrt_n_momentum_drift:
        drift *= math.sqrt(n)
    root_b = math.sqrt(batch)
    return (
        4.0 * R / eta
        + 10.0 * sigma / ((1.0 - beta) * root_b)
        + 10.0 * T * math.sqrt(1.0 - beta) * sigma / root_b
        + drift
        + 2.0 * eta * n * L * T
    )


def thm22_batch_free_closed_form(R: float, L: float, sigma: float, n: int, T: int) -> float:
    """thm22_explicit_sum evaluated at the batch-free schedule"""
    params = thm22_batch_free(R, L, sigma, n, T)
    return thm22_explicit_sum(params.eta, R, L, sigma, n, T, params.beta, params.batch)


def thm22_rate_terms(R: float, L: float, sigma: float, n: int, T: int) -> Dict[str, float]:
    """
    The three terms of the batch-free rate for the average gradient norm

    sqrt(nRL)/sqrt(T) + sigma^2/sqrt(RLT) + sqrt(sigma) (RL)^(1/4) / T^(1/4)
    """
    _check_common(R, L, n, T)
    return {
        "deterministic": math.sqrt(n * R * L / T),
        "variance": sigma**2 / math.sqrt(R * L * T),
        "noise_dominated": math.sqrt(sigma) * (R * L) ** 0.25 / T**0.25,
    }


def thm31_constants(L: float, beta: float, eta: float) -> Dict[str, float]:
    """
    Explicit constants behind the thm31 bound

    With gamma = 1/(2 beta) - 1:
        D = 1 - (1 + gamma) beta - 2 (1 + 1/gamma) beta L^2 eta^2
        K = eta/2 - eta^2 L/2 - 2 (2 eta - eta^2 L)(1 + 1/gamma) beta L^2 eta^2 / D
        C = (1 - beta)(2 eta - eta^2 L) / D
    and (1/T) sum E||grad f||_*^2 <= 2R/(K T) + C n sigma^2 / (K B) (1 + 1/((1 - beta) T)).

    :raises ConfigurationError: beta >= 1/2 or eta so large that D or K is not positive
    """
    _require_positive(L=L, eta=eta)
    if not 0.0 < beta < 0.5:
        raise ConfigurationError(f"thm31 constants need beta in (0, 1/2), got {beta}")
    gamma = 1.0 / (2.0 * beta) - 1.0
    drift = 2.0 * (1.0 + 1.0 / gamma) * beta * L**2 * eta**2
    d = 1.0 - (1.0 + gamma) * beta - drift
    if d <= 0.0:
        raise ConfigurationError(f"eta={eta} too large for beta={beta}: D={d:.4g}")
    k = eta / 2.0 - eta**2 * L / 2.0 - (2.0 * eta - eta**2 * L) * drift / d
    if k <= 0.0:
        raise ConfigurationError(f"eta={eta} too large for beta={beta}: K={k:.4g}")
    c = (1.0 - beta) * (2.0 * eta - eta**2 * L) / d
    return {"gamma": gamma, "D": d, "K": k, "C": c}


def thm31_explicit_rhs(
    R: float, L: float, sigma_sq: float, n: int, T: int, beta: float, eta: float, batch: int
) -> float:
    """
    Right side of the thm31 average

    2R/(KT) + C n sigma^2/(KB) (1 + 1/((1 - beta) T)); the last factor carries the
    initial momentum error B_1 - grad f(X_1) = G_1 - grad f(X_1).
    """
    _check_common(R, L, n, T)
    consts = thm31_constants(L, beta, eta)
    variance = consts["C"] * n * sigma_sq / (consts["K"] * batch)
    return 2.0 * R / (consts["K"] * T) + variance * (1.0 + 1.0 / ((1.0 - beta) * T))


def schedule_for(
    theorem: Theorem,
    R: float,
    L: float,
    sigma: float,
    n: int,
    T: int,
    beta: Optional[float] = None,
    power: Optional[float] = None,
    batch: Optional[int] = None,
    eta_fraction: Optional[float] = None,
) -> ScheduleParams:
    """
    Dispatch on the theorem name

    L is the Frobenius constant for thm22 and the dual-norm constant for
    thm31; sigma is unused by the latter.
    """
    theorem = Theorem(theorem)
    if theorem is Theorem.THM22_BATCH_FREE:
        return thm22_batch_free(R, L, sigma, n, T)
    if beta is None:
        raise ConfigurationError(f"{theorem.value} needs beta")
    if theorem is Theorem.THM22_BIG_BATCH:
        return thm22_big_batch(R, L, n, T, beta)
    if theorem is Theorem.THM22_POWER_BATCH:
        if power is None:
            raise ConfigurationError("thm22-power-batch needs power")
        return thm22_power_batch(R, L, n, T, beta, power)
    return thm31_schedule(L, beta, batch or 1, eta_fraction)
