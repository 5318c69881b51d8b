"""
Module: Verifier
Per-step inequality checks and theorem bound reports

Per-step checks are deterministic statements about one step (or one pair of
consecutive steps) and must hold on every run, noisy or not. They return a
SlackReport and raise InequalityViolated / IdentityViolated on failure.
Bound reports compare seed-averaged trace statistics with the explicit
right-hand sides of the two convergence theorems.
"""
import math
from dataclasses import asdict
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from muon_bench_core.config import settings
from muon_bench_core.exceptions import (
    ConfigurationError,
    DigestMismatchError,
    IdentityViolated,
    InequalityViolated,
    InsufficientDataError,
    ScheduleMismatchError,
    TraceFormatError,
)
from muon_bench_core.models.enums import Theorem, UpdateRule
from muon_bench_core.models.trace import (
    BoundReport,
    RateSlopePoint,
    RateSlopeReport,
    SlackReport,
    StepTrace,
    TraceFile,
)
from muon_bench_core.modules import schedules
from muon_bench_core.modules.matrix_core import (
    MatrixVar,
    frobenius_inner,
    frobenius_norm,
    nuclear_norm,
    spectral_norm,
)
from muon_bench_core.modules.schedules import ScheduleParams

INEQUALITY_TOL = 1e-9
IDENTITY_TOL = 1e-8
SCHEDULE_RTOL = 1e-12

StepPair = Tuple[StepTrace, StepTrace]


def _settle(check: str, t: int, lhs: float, rhs: float, tolerance: float) -> SlackReport:
    slack = rhs - lhs
    report = SlackReport(check, t, lhs, rhs, slack, tolerance, slack >= -tolerance)
    if not report.holds:
        logger.error("{} violated at step {}: lhs={:.17g} rhs={:.17g}", check, t, lhs, rhs)
        raise InequalityViolated(check, t, lhs, rhs)
    return report


def _consecutive(pair: StepPair) -> StepPair:
    cur, nxt = pair
    if nxt.t != cur.t + 1:
        raise TraceFormatError(f"steps {cur.t} and {nxt.t} are not consecutive")
    return cur, nxt


def check_muon_inner_product(
    trace_step: StepTrace, direction: MatrixVar, grad: MatrixVar, momentum: MatrixVar
) -> SlackReport:
    """
    -<grad f(X_t), O_t> <= -1/4 ||grad f(X_t)||_F + 5/2 ||grad f(X_t) - B_t||_F

    :param direction: O_t
    :param momentum: B_t
    """
    if trace_step.skipped:
        logger.debug("muon_inner_product bypassed at skipped step {}", trace_step.t)
        return SlackReport.bypass("muon_inner_product", trace_step.t, "step skipped")
    grad_norm = frobenius_norm(grad)
    lhs = -frobenius_inner(grad, direction)
    rhs = -0.25 * grad_norm + 2.5 * frobenius_norm(grad - momentum)
    tol = INEQUALITY_TOL * max(1.0, grad_norm)
    return _settle("muon_inner_product", trace_step.t, lhs, rhs, tol)


def check_lemma1_descent(pair: StepPair, L: float, n: int) -> SlackReport:
    """
    f(X_{t+1}) <= f(X_t) - eta/4 ||grad||_F + 5/2 eta ||grad - B_t||_F + eta^2 n L / 2

    Uses sqrt(n) for the step length even when the momentum had rank r < n.
    """
    cur, nxt = _consecutive(pair)
    if cur.skipped:
        logger.debug("lemma1_descent bypassed at skipped step {}", cur.t)
        return SlackReport.bypass("lemma1_descent", cur.t, "step skipped")
    eta = cur.eta_used
    rhs = (
        cur.f_val
        - 0.25 * eta * cur.grad_fro
        + 2.5 * eta * cur.mom_err_fro
        + 0.5 * eta**2 * n * L
    )
    tol = INEQUALITY_TOL * max(1.0, abs(cur.f_val))
    return _settle("lemma1_descent", cur.t, nxt.f_val, rhs, tol)


def check_spectral_identities(
    t: int, delta: MatrixVar, momentum: MatrixVar, eta: float
) -> SlackReport:
    """
    <Delta_t, B_t> = -eta ||B_t||_*^2 and ||Delta_t||_2 = eta ||B_t||_*

    The report's lhs is the worse of the two relative errors, rhs the tolerance.
    """
    nuc = nuclear_norm(momentum)
    inner_expected = -eta * nuc**2
    inner = frobenius_inner(delta, momentum)
    norm_expected = eta * nuc
    norm = spectral_norm(delta)
    inner_err = abs(inner - inner_expected) / max(1.0, abs(inner_expected))
    norm_err = abs(norm - norm_expected) / max(1.0, norm_expected)
    if inner_err > IDENTITY_TOL:
        raise IdentityViolated("spectral_inner_identity", t, inner, inner_expected)
    if norm_err > IDENTITY_TOL:
        raise IdentityViolated("spectral_norm_identity", t, norm, norm_expected)
    worst = max(inner_err, norm_err)
    return SlackReport(
        "spectral_identities", t, worst, IDENTITY_TOL, IDENTITY_TOL - worst, 0.0, True
    )


def check_spectral_descent_ineq(
    pair: StepPair, L_dual: float, eta: Optional[float] = None
) -> SlackReport:
    """
    (eta/2 - eta^2 L/2) ||grad||_*^2
        <= 2 (f(X_t) - f(X_{t+1})) + (2 eta - eta^2 L) ||grad - B_t||_*^2

    :param eta: defaults to the step size recorded in the trace
    :raises ConfigurationError: eta above 1/L, where the left coefficient turns negative
    """
    cur, nxt = _consecutive(pair)
    eta = cur.eta_used if eta is None else eta
    if eta * L_dual > 1.0 + 1e-12:
        raise ConfigurationError(f"eta={eta} exceeds 1/L={1.0 / L_dual}")
    lhs = (0.5 * eta - 0.5 * eta**2 * L_dual) * cur.grad_nuc**2
    rhs = 2.0 * (cur.f_val - nxt.f_val) + (2.0 * eta - eta**2 * L_dual) * cur.mom_err_nuc**2
    tol = INEQUALITY_TOL * max(1.0, abs(cur.f_val), abs(lhs))
    return _settle("spectral_descent_ineq", cur.t, lhs, rhs, tol)


def check_norm_equivalence(samples: Iterable[MatrixVar]) -> SlackReport:
    """
    ||A||_*^2 <= n ||A||_F^2 for every sample, n the column count

    The report's lhs is the largest ratio ||A||_*^2 / (n ||A||_F^2) seen, rhs is 1.
    """
    worst = 0.0
    count = 0
    for index, a in enumerate(samples):
        count += 1
        fro_sq = frobenius_norm(a) ** 2
        if fro_sq == 0.0:
            continue
        ratio = nuclear_norm(a) ** 2 / (a.shape[1] * fro_sq)
        if ratio > 1.0 + 1e-12:
            raise InequalityViolated("norm_equivalence", index, ratio, 1.0)
        worst = max(worst, ratio)
    if count == 0:
        raise InsufficientDataError("no samples given")
    return SlackReport("norm_equivalence", count, worst, 1.0, 1.0 - worst, 1e-12, True)


def check_momentum_error_recursion(
    t: int,
    prev_err_fro: float,
    err_fro: float,
    noise_fro: float,
    beta: float,
    eta: float,
    L: float,
    n: int,
) -> SlackReport:
    """
    ||B_t - grad_t||_F
        <= beta ||B_{t-1} - grad_{t-1}||_F + (1 - beta) ||G_t - grad_t||_F + eta L sqrt(n)

    Heavy-ball momentum only; t is the later of the two steps.
    """
    rhs = beta * prev_err_fro + (1.0 - beta) * noise_fro + eta * L * math.sqrt(n)
    return _settle("momentum_error_recursion", t, err_fro, rhs, INEQUALITY_TOL * max(1.0, rhs))


class TraceVerifier:
    """
    Runs every trace-level per-step check over stored trajectories

    Violations are collected, not raised, so one report covers a whole directory.
    """

    def __init__(self, rule: UpdateRule, lipschitz_fro: float, lipschitz_dual: float, n: int):
        self.rule = UpdateRule(rule)
        self.lipschitz_fro = lipschitz_fro
        self.lipschitz_dual = lipschitz_dual
        self.n = n
        self.violations: List[SlackReport] = []
        self.checked = 0
        self.bypassed = 0
        self.notes: List[str] = []

    def verify(self, trace: TraceFile) -> Dict:
        """
        Check one trace

        :return: summary dict with counts and the violating steps
        """
        self.violations = []
        self.checked = 0
        self.bypassed = 0
        self.notes = []

        self._validate_rows(trace)
        for pair in zip(trace.rows, trace.rows[1:]):
            if self.rule.is_muon:
                self._check(check_lemma1_descent, pair, self.lipschitz_fro, self.n)
            else:
                self._check(check_spectral_descent_ineq, pair, self.lipschitz_dual)

        return {
            "seed": trace.seed,
            "checked": self.checked,
            "bypassed": self.bypassed,
            "violations": [asdict(v) for v in self.violations],
            "notes": sorted(set(self.notes)),
        }

    def _validate_rows(self, trace: TraceFile) -> None:
        for index, row in enumerate(trace.rows, start=1):
            problem = row.validate()
            if problem is None and row.rank > self.n:
                problem = f"rank must be <= n = {self.n}, got {row.rank}"
            if problem is not None:
                raise TraceFormatError(problem, trace.path, index)

    def _check(self, fn: Callable[..., SlackReport], *args) -> None:
        try:
            report = fn(*args)
        except InequalityViolated as exc:
            self.checked += 1
            self.violations.append(
                SlackReport(exc.check, exc.step, exc.lhs, exc.rhs, exc.rhs - exc.lhs, 0.0, False)
            )
            return
        except ConfigurationError as exc:
            self.bypassed += 1
            self.notes.append(str(exc))
            return
        if report.bypassed:
            self.bypassed += 1
        else:
            self.checked += 1


def verify_traces(
    traces: Sequence[TraceFile],
    rule: UpdateRule,
    lipschitz_fro: float,
    lipschitz_dual: float,
    n: int,
) -> List[Dict]:
    """Convenience wrapper: one TraceVerifier summary per trace, in seed order"""
    verifier = TraceVerifier(rule, lipschitz_fro, lipschitz_dual, n)
    return [verifier.verify(trace) for trace in sorted(traces, key=lambda tr: tr.seed)]


def _common_digest(traces: Sequence[TraceFile]) -> Tuple[str, int]:
    if not traces:
        raise InsufficientDataError("no traces to aggregate")
    digests = {trace.digest for trace in traces}
    if len(digests) != 1:
        raise DigestMismatchError(f"traces come from {len(digests)} different configs")
    horizons = {trace.horizon for trace in traces}
    if len(horizons) != 1:
        raise ScheduleMismatchError(f"traces have different horizons: {sorted(horizons)}")
    return digests.pop(), horizons.pop()


def _require_eta(traces: Sequence[TraceFile], eta: float) -> None:
    for trace in traces:
        for row in trace.rows:
            if not math.isclose(row.eta_used, eta, rel_tol=SCHEDULE_RTOL, abs_tol=0.0):
                raise ScheduleMismatchError(
                    f"seed {trace.seed} step {row.t} used eta={row.eta_used!r}, "
                    f"schedule says {eta!r}"
                )


def _seed_statistics(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, se


def _ordered(traces: Sequence[TraceFile]) -> List[TraceFile]:
    return sorted(traces, key=lambda tr: tr.seed)


def build_bound_report_thm22(
    traces: Sequence[TraceFile],
    schedule: ScheduleParams,
    R: float,
    L: float,
    sigma: float,
    n: int,
) -> BoundReport:
    """
    Seed mean of (1/T) sum ||grad f(X_t)||_F against the explicit thm22 sum / T

    :raises DigestMismatchError: traces from different configs
    :raises ScheduleMismatchError: traces did not use schedule.eta
    :raises InsufficientDataError: sigma > 0 with fewer seeds than configured
    """
    if not schedule.theorem.is_thm22:
        raise ConfigurationError(f"{schedule.theorem.value} is not a thm22 schedule")
    digest, T = _common_digest(traces)
    _require_eta(traces, schedule.eta)
    if sigma > 0.0 and len(traces) < settings.min_seeds_for_expectation:
        raise InsufficientDataError(
            f"sigma > 0 needs at least {settings.min_seeds_for_expectation} seeds, "
            f"got {len(traces)}"
        )

    per_seed = [float(np.mean([row.grad_fro for row in tr.rows])) for tr in _ordered(traces)]
    lhs, se = _seed_statistics(per_seed)
    args = (schedule.eta, R, L, sigma, n, T, schedule.beta, schedule.batch)
    rhs = schedules.thm22_explicit_sum(*args) / T
    corrected = schedules.thm22_explicit_sum(*args, sqrt_n_momentum_drift=True) / T
    tolerance = settings.statistical_se_multiplier * se
    slack = rhs - lhs

    logger.info("thm22 report: lhs={:.6g} rhs={:.6g} over {} seeds", lhs, rhs, len(traces))
    return BoundReport(
        theorem=schedule.theorem,
        lhs_empirical=lhs,
        lhs_standard_error=se,
        rhs_explicit=rhs,
        slack=slack,
        statistical_tolerance=tolerance,
        holds=slack >= -tolerance,
        seeds=len(traces),
        config_digest=digest,
        constants={
            "R": R,
            "L": L,
            "sigma": sigma,
            "n": float(n),
            "T": float(T),
            "alpha": schedule.alpha,
            "beta": schedule.beta,
            "eta": schedule.eta,
            "batch": float(schedule.batch),
            "balance_point": schedules.thm22_balance_point(R, L, n, T, schedule.beta),
            "rhs_sqrt_n_drift": corrected,
        },
    )


def build_bound_report_thm31(
    traces: Sequence[TraceFile],
    schedule: ScheduleParams,
    R: float,
    L_dual: float,
    sigma_nuc: float,
    n: int,
    batch: Optional[int] = None,
) -> BoundReport:
    """
    Seed mean of (1/T) sum ||grad f(X_t)||_*^2 against 2R/(KT) + C n sigma^2/(KB)

    :param sigma_nuc: noise level with E||G - grad f||_*^2 <= sigma_nuc^2 / B
    :raises ConfigurationError: schedule is invalid (beta >= 1/2)
    """
    if schedule.theorem is not Theorem.THM31:
        raise ConfigurationError(f"{schedule.theorem.value} is not a thm31 schedule")
    if not schedule.valid:
        raise ConfigurationError(f"refusing an invalid thm31 schedule: {schedule.reason}")
    batch = schedule.batch if batch is None else batch
    digest, T = _common_digest(traces)
    _require_eta(traces, schedule.eta)
    if sigma_nuc > 0.0 and len(traces) < settings.min_seeds_for_expectation:
        raise InsufficientDataError(
            f"sigma > 0 needs at least {settings.min_seeds_for_expectation} seeds, "
            f"got {len(traces)}"
        )

    per_seed = [float(np.mean([row.grad_nuc**2 for row in tr.rows])) for tr in _ordered(traces)]
    lhs, se = _seed_statistics(per_seed)
    consts = schedules.thm31_constants(L_dual, schedule.beta, schedule.eta)
    rhs = schedules.thm31_explicit_rhs(
        R, L_dual, sigma_nuc**2, n, T, schedule.beta, schedule.eta, batch
    )
    tolerance = settings.statistical_se_multiplier * se
    slack = rhs - lhs

    logger.info("thm31 report: lhs={:.6g} rhs={:.6g} over {} seeds", lhs, rhs, len(traces))
    return BoundReport(
        theorem=Theorem.THM31,
        lhs_empirical=lhs,
        lhs_standard_error=se,
        rhs_explicit=rhs,
        slack=slack,
        statistical_tolerance=tolerance,
        holds=slack >= -tolerance,
        seeds=len(traces),
        config_digest=digest,
        constants={
            "R": R,
            "L_dual": L_dual,
            "sigma_nuc": sigma_nuc,
            "n": float(n),
            "T": float(T),
            "beta": schedule.beta,
            "eta": schedule.eta,
            "batch": float(batch),
            **consts,
        },
    )


def _seed_value(item: Union[float, TraceFile]) -> float:
    if isinstance(item, TraceFile):
        return float(np.mean([row.grad_fro for row in item.rows]))
    return float(item)


def rate_slope(
    by_horizon: Mapping[int, Sequence[Union[float, TraceFile]]],
    theoretical_slope: Optional[float] = None,
) -> RateSlopeReport:
    """
    Least-squares slope of log(mean gradient norm) against log T

    :param by_horizon: per horizon T, either traces or per-seed averages (1/T) sum ||grad||_F
    :raises InsufficientDataError: fewer than 3 horizons, less than two decades,
        or a non-positive mean (slope undefined)
    """
    horizons = sorted(by_horizon)
    if len(horizons) < 3:
        raise InsufficientDataError(f"need at least 3 horizons, got {len(horizons)}")
    if horizons[0] < 1 or horizons[-1] < 100 * horizons[0]:
        raise InsufficientDataError(f"horizons {horizons} span less than two decades")

    points: List[RateSlopePoint] = []
    for T in horizons:
        values = [_seed_value(item) for item in by_horizon[T]]
        if not values:
            raise InsufficientDataError(f"no seeds for T={T}")
        mean, se = _seed_statistics(values)
        if not math.isfinite(mean) or mean <= 0.0:
            raise InsufficientDataError(f"mean gradient norm at T={T} is {mean}; slope undefined")
        points.append(RateSlopePoint(horizon=T, mean=mean, standard_error=se, seeds=len(values)))

    x = np.log([p.horizon for p in points])
    y = np.log([p.mean for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    logger.info("Rate slope {:.4f} over horizons {}", slope, horizons)
    return RateSlopeReport(
        slope=float(slope),
        intercept=float(intercept),
        points=points,
        theoretical_slope=theoretical_slope,
    )
