"""
Module: Optimizers
Heavy-ball Muon, momentum-sum Muon and spectral steepest descent

The state object is single-owner and mutable; step functions take the current
parameter explicitly and return a StepOutcome holding the next one.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from muon_bench_core.config import settings
from muon_bench_core.exceptions import (
    ConfigurationError,
    DimensionError,
    DivergedError,
    NonFiniteError,
    RankZeroError,
)
from muon_bench_core.models.enums import Orthogonalizer, UpdateRule
from muon_bench_core.models.trace import StepTrace
from muon_bench_core.modules import problems
from muon_bench_core.modules.matrix_core import (
    CoeffTriple,
    MatrixVar,
    as_matrix,
    frobenius_inner,
    frobenius_norm,
    newton_schulz_orthogonalize,
    nuclear_norm,
    numerical_rank,
    svd_reduced,
)

EtaSchedule = Union[float, Sequence[float]]


@dataclass
class OptimizerState:
    """
    Hyperparameters plus the momentum buffer B_t and step counter t

    beta is the heavy-ball beta for MuonHeavyBall/SpectralDescent and the
    momentum mu for MuonSum.
    """
    rule: UpdateRule
    beta: float
    eta: EtaSchedule
    batch_size: int
    momentum: MatrixVar
    rank_tol: float
    step_count: int = 0
    init_first_full: bool = True
    orthogonalizer: Orthogonalizer = Orthogonalizer.SVD
    ns_iters: int = 5
    ns_coeffs: CoeffTriple = (1.5, -0.5, 0.0)
    ns_prescale: str = "spectral"
    accumulations: int = field(default=0)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.momentum.shape  # type: ignore[return-value]

    def eta_at(self, t: int) -> float:
        """Step size for 1-based step t"""
        if isinstance(self.eta, (int, float)):
            return float(self.eta)
        if t > len(self.eta):
            raise ConfigurationError(
                f"eta schedule has {len(self.eta)} entries, step {t} requested"
            )
        return float(self.eta[t - 1])


@dataclass(frozen=True)
class StepOutcome:
    """
    Result of one step

    direction is O_t for Muon and Delta_t for spectral descent.
    """
    new_x: MatrixVar
    direction: MatrixVar
    momentum_after: MatrixVar
    rank: int
    nuclear_norm_momentum: float
    skipped: bool
    eta: float


@dataclass(frozen=True)
class StepContext:
    """Everything an inline check may want to look at after a step"""
    trace: StepTrace
    x: MatrixVar
    grad: MatrixVar
    stochastic_grad: MatrixVar
    outcome: StepOutcome


StepObserver = Callable[[StepContext], None]


def _validate_eta(eta: EtaSchedule) -> None:
    values = [eta] if isinstance(eta, (int, float)) else list(eta)
    if not values:
        raise ConfigurationError("eta schedule is empty")
    for value in values:
        if not np.isfinite(value) or value <= 0.0:
            raise ConfigurationError(f"eta must be positive and finite, got {value}")


def init_state(
    rule: UpdateRule,
    shape: Tuple[int, int],
    beta: float,
    eta_schedule: EtaSchedule,
    batch_size: int = 1,
    rank_tol: Optional[float] = None,
    init_first_full: bool = True,
    orthogonalizer: Orthogonalizer = Orthogonalizer.SVD,
    ns_iters: Optional[int] = None,
    ns_coeffs: Optional[CoeffTriple] = None,
    ns_prescale: Optional[str] = None,
) -> OptimizerState:
    """
    Fresh optimizer state with zero momentum and t = 0

    :param rule: update rule
    :param shape: (m, n) of the parameter
    :param beta: beta (or mu for MuonSum) in [0, 1)
    :param eta_schedule: constant step size or per-step sequence, all > 0
    :param batch_size: stochastic gradients averaged per step
    :param rank_tol: relative SVD truncation threshold
    :param init_first_full: set B_1 = G_1 instead of (1 - beta) G_1
    :raises ConfigurationError: invalid hyperparameter
    """
    rule = UpdateRule(rule)
    m, n = shape
    if m < 1 or n < 1:
        raise ConfigurationError(f"shape must be positive, got {shape}")
    if not 0.0 <= beta < 1.0:
        raise ConfigurationError(f"beta must lie in [0, 1), got {beta}")
    _validate_eta(eta_schedule)
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    rank_tol = settings.rank_tol if rank_tol is None else rank_tol
    if not 0.0 <= rank_tol < 1.0:
        raise ConfigurationError(f"rank_tol must lie in [0, 1), got {rank_tol}")

    return OptimizerState(
        rule=rule,
        beta=float(beta),
        eta=eta_schedule if isinstance(eta_schedule, (int, float)) else tuple(eta_schedule),
        batch_size=int(batch_size),
        momentum=np.zeros((m, n)),
        rank_tol=rank_tol,
        init_first_full=init_first_full,
        orthogonalizer=Orthogonalizer(orthogonalizer),
        ns_iters=ns_iters or settings.ns_iters,
        ns_coeffs=tuple(ns_coeffs or settings.ns_coeffs),  # type: ignore[arg-type]
        ns_prescale=ns_prescale or settings.ns_prescale,
    )


def _check_gradient(state: OptimizerState, g: MatrixVar) -> MatrixVar:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match state {state.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("stochastic gradient contains NaN or Inf")
    return g


def accumulate_momentum(state: OptimizerState, g: MatrixVar) -> MatrixVar:
    """
    Fold a gradient into the momentum buffer

    Heavy-ball and spectral descent: B_t = beta B_{t-1} + (1 - beta) g
    (B_1 = g when init_first_full). Sum form: B_t = mu B_{t-1} + g.

    :return: the new buffer (also stored on the state)
    """
    g = _check_gradient(state, g)
    if state.rule is UpdateRule.MUON_SUM:
        buffer = state.beta * state.momentum + g
    elif state.accumulations == 0 and state.init_first_full:
        buffer = g.copy()
    else:
        buffer = state.beta * state.momentum + (1.0 - state.beta) * g
    state.momentum = buffer
    state.accumulations += 1
    return buffer


def _skipped(state: OptimizerState, x: MatrixVar, buffer: MatrixVar, eta: float) -> StepOutcome:
    logger.warning("Step {}: momentum is rank zero, step skipped", state.step_count)
    return StepOutcome(
        new_x=x,
        direction=np.zeros_like(buffer),
        momentum_after=buffer.copy(),
        rank=0,
        nuclear_norm_momentum=nuclear_norm(buffer),
        skipped=True,
        eta=eta,
    )


def muon_step(state: OptimizerState, x: MatrixVar, g: MatrixVar) -> StepOutcome:
    """
    One Muon step: X_{t+1} = X_t - eta_t O_t with O_t the polar factor of B_t

    :param state: MuonHeavyBall or MuonSum state
    :param x: current parameter X_t
    :param g: stochastic gradient G_t
    :return: StepOutcome; skipped when B_t is rank zero
    """
    if not state.rule.is_muon:
        raise ConfigurationError(f"muon_step called with rule {state.rule.value}")
    buffer = accumulate_momentum(state, g)
    state.step_count += 1
    eta = state.eta_at(state.step_count)

    try:
        if state.orthogonalizer is Orthogonalizer.SVD:
            factors = svd_reduced(buffer, state.rank_tol)
            direction = factors.U @ factors.V.T
            rank = factors.rank
            nuc = float(np.sum(factors.S))
        else:
            direction = newton_schulz_orthogonalize(
                buffer, state.ns_iters, state.ns_coeffs, prescale=state.ns_prescale
            )
            rank = numerical_rank(buffer, state.rank_tol)
            nuc = nuclear_norm(buffer)
            if rank == 0:
                raise RankZeroError("momentum below rank threshold")
    except RankZeroError:
        return _skipped(state, x, buffer, eta)

    return StepOutcome(
        new_x=x - eta * direction,
        direction=direction,
        momentum_after=buffer.copy(),
        rank=rank,
        nuclear_norm_momentum=nuc,
        skipped=False,
        eta=eta,
    )


def spectral_descent_step(state: OptimizerState, x: MatrixVar, g: MatrixVar) -> StepOutcome:
    """
    One spectral steepest-descent step

    Delta_t = -eta ||B_t||_* U V^T, the minimizer of <B_t, D> + ||D||_2^2 / (2 eta).
    Then <Delta_t, B_t> = -eta ||B_t||_*^2 and ||Delta_t||_2 = eta ||B_t||_*.
    """
    if state.rule is not UpdateRule.SPECTRAL_DESCENT:
        raise ConfigurationError(f"spectral_descent_step called with rule {state.rule.value}")
    buffer = accumulate_momentum(state, g)
    state.step_count += 1
    eta = state.eta_at(state.step_count)

    try:
        factors = svd_reduced(buffer, state.rank_tol)
    except RankZeroError:
        return _skipped(state, x, buffer, eta)

    nuc = float(np.sum(factors.S))
    delta = -eta * nuc * (factors.U @ factors.V.T)
    return StepOutcome(
        new_x=x + delta,
        direction=delta,
        momentum_after=buffer.copy(),
        rank=factors.rank,
        nuclear_norm_momentum=nuc,
        skipped=False,
        eta=eta,
    )


def step(state: OptimizerState, x: MatrixVar, g: MatrixVar) -> StepOutcome:
    """Dispatch on state.rule"""
    if state.rule is UpdateRule.SPECTRAL_DESCENT:
        return spectral_descent_step(state, x, g)
    return muon_step(state, x, g)


def run_epoch(
    state: OptimizerState,
    problem: "problems.ProblemSpec",
    x0: MatrixVar,
    T: int,
    seed: int,
    observer: Optional[StepObserver] = None,
    divergence_threshold: Optional[float] = None,
) -> List[StepTrace]:
    """
    Run T steps and record one StepTrace per step

    Step t draws its minibatch with seed (seed, t), so a run is a pure function of
    (problem, state hyperparameters, x0, T, seed).

    :param observer: called after every step with a StepContext (inline checks)
    :raises DivergedError: f(X_t) exceeded the divergence threshold
    """
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    x = as_matrix(x0)
    if x.shape != problem.shape or x.shape != state.shape:
        raise DimensionError(
            f"x0 shape {x.shape}, problem {problem.shape}, state {state.shape} disagree"
        )
    threshold = divergence_threshold or settings.divergence_threshold

    traces: List[StepTrace] = []
    for t in range(1, T + 1):
        f_val = problems.objective_value(problem, x)
        if not np.isfinite(f_val) or f_val > threshold:
            logger.error("Seed {} diverged at step {}: f={}", seed, t, f_val)
            raise DivergedError(f"objective {f_val:.3g} exceeded {threshold:.3g}", t, f_val, seed)

        grad = problems.exact_gradient(problem, x)
        g = problems.stochastic_gradient(problem, x, state.batch_size, (seed, t))
        outcome = step(state, x, g)
        err = outcome.momentum_after - grad

        trace = StepTrace(
            t=t,
            f_val=f_val,
            grad_fro=frobenius_norm(grad),
            grad_nuc=nuclear_norm(grad),
            mom_err_fro=frobenius_norm(err),
            mom_err_nuc=nuclear_norm(err),
            b_nuc=outcome.nuclear_norm_momentum,
            rank=outcome.rank,
            eta_used=outcome.eta,
            inner_grad_dir=frobenius_inner(grad, outcome.direction),
            skipped=outcome.skipped,
        )
        traces.append(trace)
        if observer is not None:
            observer(StepContext(trace=trace, x=x, grad=grad, stochastic_grad=g, outcome=outcome))
        x = outcome.new_x

    logger.debug("Seed {}: {} steps, final f={:.6g}", seed, T, traces[-1].f_val)
    return traces
