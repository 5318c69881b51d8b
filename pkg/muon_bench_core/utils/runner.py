"""
Experiment runner

Builds and certifies the problem once, resolves the step-size schedule, runs
one trial per seed (optionally in worker processes) and writes traces plus
run_meta.json. Results are always merged in sorted seed order, so the output
does not depend on the number of workers.
"""
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from muon_bench_core.config import settings
from muon_bench_core.exceptions import (
    ConfigurationError,
    DivergedError,
    IdentityViolated,
    InequalityViolated,
    InsufficientDataError,
    NumericalDivergenceError,
)
from muon_bench_core.models.enums import InlineCheck, Orthogonalizer, UpdateRule
from muon_bench_core.models.run_config import RunConfig
from muon_bench_core.models.trace import (
    CertificationReport,
    RateSlopeReport,
    StepTrace,
    TraceFile,
)
from muon_bench_core.modules import optimizers, problems, schedules, verifier
from muon_bench_core.modules.matrix_core import (
    MatrixVar,
    frobenius_norm,
    newton_schulz_orthogonalize,
    polar_factor,
    random_well_conditioned,
)
from muon_bench_core.modules.optimizers import OptimizerState, StepContext
from muon_bench_core.modules.problems import ProblemSpec
from muon_bench_core.modules.schedules import ScheduleParams
from muon_bench_core.utils.trace_io import write_trace

RUN_META = "run_meta.json"
SWEEP_REPORT = "sweep_report.json"


@dataclass(frozen=True)
class ResolvedHyperparameters:
    """Hyperparameters actually used, after a schedule reference is expanded"""
    rule: UpdateRule
    beta: float
    eta: float
    batch: int
    T: int
    schedule: Optional[ScheduleParams] = None

    def as_dict(self) -> Dict:
        return {
            "rule": self.rule.value,
            "beta": self.beta,
            "eta": self.eta,
            "batch": self.batch,
            "T": self.T,
            "schedule": None if self.schedule is None else self.schedule.model_dump(mode="json"),
        }


@dataclass
class TrialResult:
    seed: int
    status: str
    rows: List[StepTrace] = field(default_factory=list)
    violations: Dict[str, int] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)
    bypassed: Dict[str, int] = field(default_factory=dict)
    message: str = ""
    failed_step: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class RunOutcome:
    digest: str
    out_dir: Path
    hyperparameters: ResolvedHyperparameters
    constants: Dict[str, float]
    results: List[TrialResult]
    meta: Dict

    @property
    def diverged(self) -> List[int]:
        return [r.seed for r in self.results if r.status == "diverged"]

    @property
    def violation_count(self) -> int:
        return sum(sum(r.violations.values()) for r in self.results)

    def traces(self) -> List[TraceFile]:
        return [
            TraceFile(digest=self.digest, seed=r.seed, rows=r.rows, version=settings.trace_version)
            for r in self.results
            if r.ok
        ]


def resolve_hyperparameters(
    config: RunConfig, problem: ProblemSpec, R: float
) -> ResolvedHyperparameters:
    """
    Expand the optimizer section into concrete (beta, eta, batch)

    :raises ConfigurationError: the referenced schedule is invalid
    """
    opt = config.optimizer
    T = config.run.T
    if opt.schedule is None:
        return ResolvedHyperparameters(opt.rule, opt.beta, float(opt.eta), opt.batch, T)

    if opt.schedule.is_thm22:
        params = schedules.schedule_for(
            opt.schedule,
            R,
            problem.lipschitz_fro,
            math.sqrt(problem.sigma_sq_fro),
            problem.n,
            T,
            beta=opt.beta,
            power=opt.power,
        )
    else:
        params = schedules.schedule_for(
            opt.schedule,
            R,
            problem.lipschitz_dual,
            math.sqrt(problem.sigma_sq_nuc),
            problem.n,
            T,
            beta=opt.beta,
            batch=opt.batch,
            eta_fraction=opt.eta_fraction,
        )
    if not params.valid:
        raise ConfigurationError(f"optimizer.schedule: {params.reason}")
    logger.info(
        "Schedule {}: beta={:.6g} eta={:.6g} batch={}",
        params.theorem.value,
        params.beta,
        params.eta,
        params.batch,
    )
    return ResolvedHyperparameters(opt.rule, params.beta, params.eta, params.batch, T, params)


class InlineChecker:
    """
    Step observer running the checks that need the full matrices

    Counts checks and violations per check name instead of aborting the trial.
    """

    def __init__(self, checks: Sequence[InlineCheck], state: OptimizerState, problem: ProblemSpec):
        self.checks = set(checks)
        self.state = state
        self.problem = problem
        self.violations: Dict[str, int] = {}
        self.checked: Dict[str, int] = {}
        self.bypassed: Dict[str, int] = {}
        self._previous: Optional[StepTrace] = None

    def __call__(self, ctx: StepContext) -> None:
        rule = self.state.rule
        if (
            InlineCheck.MUON_INNER_PRODUCT in self.checks
            and rule.is_muon
            and self.state.orthogonalizer is Orthogonalizer.SVD
        ):
            self._run(
                InlineCheck.MUON_INNER_PRODUCT,
                verifier.check_muon_inner_product,
                ctx.trace,
                ctx.outcome.direction,
                ctx.grad,
                ctx.outcome.momentum_after,
            )
        if (
            InlineCheck.MOMENTUM_ERROR_RECURSION in self.checks
            and rule is UpdateRule.MUON_HEAVY_BALL
            and self._previous is not None
        ):
            self._run(
                InlineCheck.MOMENTUM_ERROR_RECURSION,
                verifier.check_momentum_error_recursion,
                ctx.trace.t,
                self._previous.mom_err_fro,
                ctx.trace.mom_err_fro,
                frobenius_norm(ctx.stochastic_grad - ctx.grad),
                self.state.beta,
                self._previous.eta_used,
                self.problem.lipschitz_fro,
                self.problem.n,
            )
        if (
            InlineCheck.SPECTRAL_IDENTITIES in self.checks
            and rule is UpdateRule.SPECTRAL_DESCENT
            and not ctx.outcome.skipped
        ):
            self._run(
                InlineCheck.SPECTRAL_IDENTITIES,
                verifier.check_spectral_identities,
                ctx.trace.t,
                ctx.outcome.direction,
                ctx.outcome.momentum_after,
                ctx.outcome.eta,
            )
        if InlineCheck.NORM_EQUIVALENCE in self.checks:
            noise = ctx.stochastic_grad - ctx.grad
            if np.any(noise):
                self._run(InlineCheck.NORM_EQUIVALENCE, verifier.check_norm_equivalence, [noise])
        self._previous = ctx.trace

    def _run(self, check: InlineCheck, fn, *args) -> None:
        name = check.value
        try:
            report = fn(*args)
        except (InequalityViolated, IdentityViolated) as exc:
            self.checked[name] = self.checked.get(name, 0) + 1
            self.violations[name] = self.violations.get(name, 0) + 1
            logger.error("Inline check {} failed: {}", name, exc)
            return
        if report.bypassed:
            self.bypassed[name] = self.bypassed.get(name, 0) + 1
        else:
            self.checked[name] = self.checked.get(name, 0) + 1


def run_trial(
    config: RunConfig,
    problem: ProblemSpec,
    hyper: ResolvedHyperparameters,
    x1: MatrixVar,
    seed: int,
) -> TrialResult:
    """One seed: fresh state, T steps, inline checks; divergence becomes a failed result"""
    opt = config.optimizer
    state = optimizers.init_state(
        hyper.rule,
        problem.shape,
        hyper.beta,
        hyper.eta,
        batch_size=hyper.batch,
        rank_tol=opt.rank_tol,
        init_first_full=opt.init_first_full,
        orthogonalizer=opt.orthogonalizer,
        ns_iters=opt.ns_iters,
        ns_prescale=opt.ns_prescale,
    )
    checker = InlineChecker(config.run.checks, state, problem)
    logger.info("Seed {}: {} steps of {}", seed, hyper.T, hyper.rule.value)
    try:
        rows = optimizers.run_epoch(
            state,
            problem,
            x1,
            hyper.T,
            seed,
            observer=checker,
            divergence_threshold=config.run.divergence_threshold,
        )
    except (DivergedError, NumericalDivergenceError) as exc:
        return TrialResult(
            seed=seed,
            status="diverged",
            violations=checker.violations,
            checked=checker.checked,
            bypassed=checker.bypassed,
            message=str(exc),
            failed_step=getattr(exc, "step", None),
        )
    return TrialResult(
        seed=seed,
        status="ok",
        rows=rows,
        violations=checker.violations,
        checked=checker.checked,
        bypassed=checker.bypassed,
    )


class ExperimentRunner:
    """
    Runs a validated RunConfig end to end

    The problem, its certification and X_1 are computed once in the parent
    process; workers receive them by pickling.
    """

    def __init__(
        self,
        config: RunConfig,
        workers: Optional[int] = None,
        problem: Optional[ProblemSpec] = None,
        certification: Optional[CertificationReport] = None,
    ):
        self.config = config
        self.workers = workers or settings.workers
        self.problem = problem
        self.certification = certification
        self.digest = config.digest()

    def prepare(self) -> Tuple[ProblemSpec, CertificationReport, MatrixVar, float]:
        if self.problem is None:
            self.problem = problems.build_problem(self.config.problem)
        if self.certification is None:
            self.certification = problems.certify_constants(
                self.problem, self.config.problem.certify_trials, self.config.problem.seed
            )
        x1 = self.problem.initial_point(self.config.problem.r_target, seed=0)
        R = problems.objective_value(self.problem, x1) - self.problem.f_star
        return self.problem, self.certification, x1, R

    def run(self, write: bool = True) -> RunOutcome:
        """
        Execute every seed and persist traces and run_meta.json

        Traces of diverged seeds are not written; their failure is recorded in the meta file.
        """
        problem, certification, x1, R = self.prepare()
        hyper = resolve_hyperparameters(self.config, problem, R)
        seeds = sorted(self.config.run.seeds)
        trial = partial(run_trial, self.config, problem, hyper, x1)

        if self.workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(self.workers, len(seeds))) as pool:
                results = list(pool.map(trial, seeds))
        else:
            results = [trial(seed) for seed in seeds]
        results.sort(key=lambda r: r.seed)

        out_dir = Path(self.config.run.out_dir)
        constants = {
            **problem.describe(),
            "R": R,
            "sigma": math.sqrt(problem.sigma_sq_fro),
            "sigma_nuc": math.sqrt(problem.sigma_sq_nuc),
        }
        meta = {
            "config_digest": self.digest,
            "trace_version": settings.trace_version,
            "hyperparameters": hyper.as_dict(),
            "constants": constants,
            "certification": certification.model_dump(mode="json"),
            "seeds": [
                {
                    "seed": r.seed,
                    "status": r.status,
                    "message": r.message,
                    "failed_step": r.failed_step,
                    "inline_checked": r.checked,
                    "inline_bypassed": r.bypassed,
                    "inline_violations": r.violations,
                }
                for r in results
            ],
        }
        outcome = RunOutcome(self.digest, out_dir, hyper, constants, results, meta)
        if write:
            for trace in outcome.traces():
                write_trace(trace, out_dir)
            write_json(out_dir / RUN_META, meta)
        logger.info(
            "Run {} finished: {} seeds ok, {} diverged, {} inline violations",
            self.digest[:12],
            len(outcome.traces()),
            len(outcome.diverged),
            outcome.violation_count,
        )
        return outcome


def write_json(path: Path, payload: Dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_run_meta(directory: Union[str, Path]) -> Dict:
    path = Path(directory) / RUN_META
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc


def run_sweep(
    config: RunConfig,
    horizons: Sequence[int],
    seed_count: int,
    out_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> RateSlopeReport:
    """
    Run the same config at several horizons and fit the rate slope

    Each horizon gets its own subdirectory T<horizon>; the schedule is recomputed
    per horizon. sweep_report.json lands in the base directory.

    :raises InsufficientDataError: fewer than 3 horizons or under two decades
    :raises DivergedError: a seed diverged at some horizon
    """
    horizons = sorted(set(int(T) for T in horizons))
    if len(horizons) < 3:
        raise InsufficientDataError(f"need at least 3 horizons, got {len(horizons)}")
    if horizons[-1] < 100 * horizons[0]:
        raise InsufficientDataError(f"horizons {horizons} span less than two decades")
    if seed_count < 1:
        raise ConfigurationError("seed_count must be >= 1")

    base = Path(out_dir or config.run.out_dir)
    problem = problems.build_problem(config.problem)
    certification = problems.certify_constants(
        problem, config.problem.certify_trials, config.problem.seed
    )

    averages: Dict[int, List[float]] = {}
    digests: Dict[str, str] = {}
    for T in horizons:
        cfg = config.with_run(T=T, seeds=list(range(seed_count)), out_dir=str(base / f"T{T:06d}"))
        outcome = ExperimentRunner(cfg, workers, problem, certification).run()
        if outcome.diverged:
            first = next(r for r in outcome.results if r.status == "diverged")
            raise DivergedError(first.message, first.failed_step or 0, float("nan"), first.seed)
        averages[T] = [float(np.mean([row.grad_fro for row in r.rows])) for r in outcome.results]
        digests[str(T)] = outcome.digest

    theoretical = -0.5 if problem.sigma_sq_fro == 0.0 else -0.25
    report = verifier.rate_slope(averages, theoretical_slope=theoretical)
    write_json(
        base / SWEEP_REPORT,
        {**report.model_dump(mode="json"), "config_digests": digests, "seeds": seed_count},
    )
    return report


def parse_shape(text: str) -> Tuple[int, int]:
    """'32x16' -> (32, 16)"""
    m, sep, n = text.lower().partition("x")
    try:
        shape = (int(m), int(n))
    except ValueError:
        raise ConfigurationError(f"shape must look like 32x16, got {text!r}") from None
    if not sep or shape[0] < 1 or shape[1] < 1:
        raise ConfigurationError(f"shape must look like 32x16, got {text!r}")
    return shape


def compare_orthogonalizers(
    shapes: Sequence[Tuple[int, int]],
    trials: int,
    iters: Optional[int] = None,
    condition: float = 2.0,
    seed: int = 0,
    prescale: Optional[str] = None,
    tolerance: float = 1e-2,
) -> pd.DataFrame:
    """
    Frobenius deviation of Newton-Schulz from the exact polar factor

    Inputs are random matrices with singular values log-uniform in [1, condition].
    A diverging iteration is reported as an infinite deviation, not raised.

    :return: one row per shape with max/mean deviation and a within-tolerance flag
    """
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    iters = iters or settings.ns_iters
    prescale = prescale or settings.ns_prescale
    rows = []
    for m, n in shapes:
        rng = np.random.default_rng([seed, m, n])
        deviations = np.empty(trials)
        for i in range(trials):
            b = random_well_conditioned(m, n, condition, rng)
            exact = polar_factor(b)
            try:
                approx = newton_schulz_orthogonalize(
                    b, iters, settings.ns_coeffs, prescale=prescale
                )
                deviations[i] = frobenius_norm(approx - exact)
            except NumericalDivergenceError:
                deviations[i] = np.inf
        rows.append(
            {
                "shape": f"{m}x{n}",
                "condition": condition,
                "iters": iters,
                "trials": trials,
                "max_deviation": float(deviations.max()),
                "mean_deviation": float(deviations.mean()),
                "within_tolerance": bool(deviations.max() <= tolerance),
            }
        )
    return pd.DataFrame(rows)
