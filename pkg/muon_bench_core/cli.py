"""
Command-line interface

    muon-bench run --config CONFIG [--out DIR] [--seeds N] [--workers K]
    muon-bench verify --traces DIR [--theorem NAME] [constant overrides]
    muon-bench schedule --theorem NAME --R R --L L --n N --T T [--sigma S] [--beta B] ...
    muon-bench sweep --config CONFIG --horizons 100 1000 10000 [--seeds N] [--out DIR]
    muon-bench compare-orthogonalizers [--shapes 32x32 64x16] [--trials N] [--iters K]

Exit codes: 0 success, 1 usage/config/format error, 2 verification failure, 3 divergence.
Results go to stdout, logs to stderr.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from loguru import logger

from muon_bench_core import __version__
from muon_bench_core.config import settings
from muon_bench_core.exceptions import (
    CertificationFailed,
    ConfigurationError,
    DigestMismatchError,
    DivergedError,
    IdentityViolated,
    InequalityViolated,
    InsufficientDataError,
    ScheduleMismatchError,
    TraceFormatError,
)
from muon_bench_core.models.enums import Theorem, UpdateRule
from muon_bench_core.models.run_config import load_run_config
from muon_bench_core.modules import schedules, verifier
from muon_bench_core.modules.schedules import ScheduleParams
from muon_bench_core.utils import report
from muon_bench_core.utils.runner import (
    RUN_META,
    ExperimentRunner,
    compare_orthogonalizers,
    parse_shape,
    read_run_meta,
    run_sweep,
    write_json,
)
from muon_bench_core.utils.trace_io import read_trace_dir

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2
EXIT_DIVERGED = 3

VERIFY_REPORT = "verify_report.json"
LOG_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{line} - {message}"
)

_USAGE_ERRORS = (
    ConfigurationError,
    CertificationFailed,
    TraceFormatError,
    DigestMismatchError,
    ScheduleMismatchError,
    InsufficientDataError,
)


class BenchArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; 2 is reserved for verification failures here"""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(level: Optional[str] = None) -> None:
    logger.remove()
    logger.add(
        sys.stderr,
        level=(level or settings.log_level).upper(),
        format=LOG_FORMAT,
    )


def cmd_run(
    config_path: str,
    out_dir: Optional[str] = None,
    seeds: Optional[int] = None,
    workers: Optional[int] = None,
) -> int:
    """Run every seed of a config; 3 if any seed diverged, 2 on inline check failures"""
    config = load_run_config(config_path)
    changes: Dict = {}
    if out_dir is not None:
        changes["out_dir"] = out_dir
    if seeds is not None:
        changes["seeds"] = list(range(seeds))
    if changes:
        config = config.with_run(**changes)

    outcome = ExperimentRunner(config, workers).run()
    print(f"config digest : {outcome.digest}")
    print(f"output        : {outcome.out_dir}")
    for result in outcome.results:
        detail = f" ({result.message})" if result.message else ""
        bad = sum(result.violations.values())
        print(f"seed {result.seed:>6}: {result.status}, {bad} inline violations{detail}")
    if outcome.diverged:
        return EXIT_DIVERGED
    if outcome.violation_count:
        return EXIT_VERIFICATION
    return EXIT_OK


VERIFY_FLAGS = {
    "lipschitz_fro": "--lipschitz-fro",
    "lipschitz_dual": "--lipschitz-dual",
    "n": "--n",
    "R": "--R",
    "sigma": "--sigma",
    "sigma_nuc": "--sigma",
}


def _constant(value: Optional[float], meta: Dict, key: str) -> float:
    if value is not None:
        return value
    if key not in meta:
        raise ConfigurationError(
            f"constant {key} is not in {RUN_META}; pass it with {VERIFY_FLAGS[key]}"
        )
    return float(meta[key])


def _schedule_for_verify(
    theorem: Theorem, hyper: Dict, consts: Dict, horizon: int
) -> ScheduleParams:
    stored = hyper.get("schedule")
    if stored is not None and stored["theorem"] == theorem.value:
        return ScheduleParams.model_validate(stored)
    L = consts["lipschitz_fro"] if theorem.is_thm22 else consts["lipschitz_dual"]
    sigma = consts["sigma"] if theorem.is_thm22 else consts["sigma_nuc"]
    return schedules.schedule_for(
        theorem,
        consts["R"],
        L,
        sigma,
        int(consts["n"]),
        int(hyper.get("T", horizon)),
        beta=hyper.get("beta"),
        batch=hyper.get("batch"),
    )


def cmd_verify(
    trace_dir: str,
    theorem: Optional[str] = None,
    lipschitz_fro: Optional[float] = None,
    lipschitz_dual: Optional[float] = None,
    R: Optional[float] = None,
    sigma: Optional[float] = None,
    rule: Optional[str] = None,
    n: Optional[int] = None,
    beta: Optional[float] = None,
    batch: Optional[int] = None,
) -> int:
    """
    Per-step checks over every trace plus a bound report; writes verify_report.json

    Constants default to those recorded in run_meta.json. Flags override them, so a
    directory without run_meta.json can be verified from flags alone.
    """
    traces = read_trace_dir(trace_dir)
    meta_path = Path(trace_dir) / RUN_META
    meta = read_run_meta(trace_dir) if meta_path.exists() else {}
    if meta and meta["config_digest"] != traces[0].digest:
        raise DigestMismatchError(f"{RUN_META} digest differs from the traces' digest")
    hyper = dict(meta.get("hyperparameters", {}))
    if beta is not None:
        hyper["beta"] = beta
    if batch is not None:
        hyper["batch"] = batch
    consts = dict(meta.get("constants", {}))
    consts["lipschitz_fro"] = _constant(lipschitz_fro, consts, "lipschitz_fro")
    consts["lipschitz_dual"] = _constant(lipschitz_dual, consts, "lipschitz_dual")
    n = int(_constant(n, consts, "n"))
    if R is not None:
        consts["R"] = R
    if sigma is not None:
        consts["sigma"] = sigma
        consts["sigma_nuc"] = sigma * n**0.5
    update_rule = UpdateRule(rule or hyper.get("rule", UpdateRule.MUON_HEAVY_BALL.value))

    summaries = verifier.verify_traces(
        traces, update_rule, consts["lipschitz_fro"], consts["lipschitz_dual"], n
    )
    inline = meta.get("seeds", [])
    print(report.render_verification(summaries, inline))

    failed = any(s["violations"] for s in summaries)
    failed = failed or any(sum(e.get("inline_violations", {}).values()) for e in inline)

    bound = None
    chosen = theorem or (hyper.get("schedule") or {}).get("theorem")
    if chosen is not None:
        thm = Theorem(chosen)
        for key in ("R", "sigma", "sigma_nuc"):
            consts[key] = _constant(None, consts, key)
        params = _schedule_for_verify(thm, hyper, consts, traces[0].horizon)
        if thm.is_thm22:
            bound = verifier.build_bound_report_thm22(
                traces, params, consts["R"], consts["lipschitz_fro"], consts["sigma"], n
            )
        else:
            bound = verifier.build_bound_report_thm31(
                traces, params, consts["R"], consts["lipschitz_dual"], consts["sigma_nuc"], n
            )
        print(report.render_bound_report(bound))
        failed = failed or not bound.holds

    write_json(
        Path(trace_dir) / VERIFY_REPORT,
        {
            "config_digest": traces[0].digest,
            "passed": not failed,
            "traces": summaries,
            "inline": inline,
            "bound_report": None if bound is None else bound.model_dump(mode="json"),
        },
    )
    if any(e.get("status") == "diverged" for e in inline):
        return EXIT_DIVERGED
    return EXIT_VERIFICATION if failed else EXIT_OK


def cmd_schedule(
    theorem: str,
    R: Optional[float],
    L: Optional[float],
    sigma: Optional[float],
    n: Optional[int],
    T: Optional[int],
    beta: Optional[float] = None,
    power: Optional[float] = None,
    batch: Optional[int] = None,
    eta_fraction: Optional[float] = None,
) -> int:
    """Print the parameters a theorem prescribes; invalid thm31 inputs still exit 0"""
    thm = Theorem(theorem)
    if thm is Theorem.THM31:
        if L is None or beta is None:
            raise ConfigurationError("thm31 needs --L and --beta")
        if eta_fraction is None:
            params = schedules.thm31_eta_cap(L, beta, batch or 1)
        else:
            params = schedules.thm31_schedule(L, beta, batch or 1, eta_fraction)
    else:
        required = (("--R", R), ("--L", L), ("--n", n), ("--T", T))
        missing = [flag for flag, value in required if value is None]
        if thm is Theorem.THM22_BATCH_FREE and sigma is None:
            missing.append("--sigma")
        if missing:
            raise ConfigurationError(f"{thm.value} needs {' '.join(missing)}")
        params = schedules.schedule_for(thm, R, L, sigma or 0.0, n, T, beta=beta, power=power)
        terms = schedules.thm22_deterministic_terms(params.eta, R, L, n, T, params.beta)
        if thm is Theorem.THM22_BATCH_FREE:
            terms["sum_bound"] = schedules.thm22_batch_free_closed_form(R, L, sigma, n, T)
            rate = schedules.thm22_rate_terms(R, L, sigma, n, T)
            terms.update({f"rate_{key}": value for key, value in rate.items()})
        print(report.render_schedule(params, terms))
        return EXIT_OK
    print(report.render_schedule(params))
    return EXIT_OK


def cmd_sweep(
    config_path: str,
    horizons: Sequence[int],
    seeds: int,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
) -> int:
    config = load_run_config(config_path)
    result = run_sweep(config, horizons, seeds, out_dir, workers)
    print(report.render_rate_slope(result))
    return EXIT_OK


def cmd_compare_orthogonalizers(
    shapes: Sequence[str],
    trials: int,
    iters: Optional[int] = None,
    condition: float = 2.0,
    prescale: Optional[str] = None,
    tolerance: float = 1e-2,
    seed: int = 0,
) -> int:
    table = compare_orthogonalizers(
        [parse_shape(s) for s in shapes], trials, iters, condition, seed, prescale, tolerance
    )
    print(report.render_deviation_table(table))
    return EXIT_OK


def build_parser() -> BenchArgumentParser:
    parser = BenchArgumentParser(prog="muon-bench", description="Muon optimizer benchmark")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="overrides MUON_BENCH_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every seed of a config and write traces")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--seeds", type=int, default=None, help="use seeds 0..N-1")
    run.add_argument("--workers", type=int, default=None)

    verify = sub.add_parser("verify", help="check traces and build a bound report")
    verify.add_argument("--traces", "--out", dest="traces", required=True)
    verify.add_argument("--theorem", choices=[t.value for t in Theorem], default=None)
    verify.add_argument("--rule", choices=[r.value for r in UpdateRule], default=None)
    verify.add_argument("--lipschitz-fro", type=float, default=None)
    verify.add_argument("--lipschitz-dual", type=float, default=None)
    verify.add_argument("--R", type=float, default=None)
    verify.add_argument("--sigma", type=float, default=None)
    verify.add_argument("--n", type=int, default=None)
    verify.add_argument("--beta", type=float, default=None, help="bound report only")
    verify.add_argument("--batch", type=int, default=None, help="bound report only")

    schedule = sub.add_parser("schedule", help="print theorem-prescribed hyperparameters")
    schedule.add_argument("--theorem", required=True, choices=[t.value for t in Theorem])
    schedule.add_argument("--R", type=float, default=None)
    schedule.add_argument("--L", type=float, default=None)
    schedule.add_argument("--sigma", type=float, default=None)
    schedule.add_argument("--n", type=int, default=None)
    schedule.add_argument("--T", type=int, default=None)
    schedule.add_argument("--beta", type=float, default=None)
    schedule.add_argument("--power", type=float, default=None)
    schedule.add_argument("--batch", type=int, default=None)
    schedule.add_argument("--eta-fraction", type=float, default=None)

    sweep = sub.add_parser("sweep", help="run several horizons and fit the rate slope")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--horizons", type=int, nargs="+", required=True)
    sweep.add_argument("--seeds", type=int, default=settings.min_seeds_for_expectation)
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--workers", type=int, default=None)

    compare = sub.add_parser(
        "compare-orthogonalizers", help="Newton-Schulz deviation from the exact polar factor"
    )
    compare.add_argument("--shapes", nargs="+", default=["32x32"])
    compare.add_argument("--trials", type=int, default=100)
    compare.add_argument("--iters", type=int, default=None)
    compare.add_argument("--condition", type=float, default=2.0)
    compare.add_argument("--prescale", choices=["frobenius", "spectral"], default=None)
    compare.add_argument("--tolerance", type=float, default=1e-2)
    compare.add_argument("--seed", type=int, default=0)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seeds, args.workers)
    if args.command == "verify":
        return cmd_verify(
            args.traces,
            args.theorem,
            args.lipschitz_fro,
            args.lipschitz_dual,
            args.R,
            args.sigma,
            args.rule,
            args.n,
            args.beta,
            args.batch,
        )
    if args.command == "schedule":
        return cmd_schedule(
            args.theorem,
            args.R,
            args.L,
            args.sigma,
            args.n,
            args.T,
            args.beta,
            args.power,
            args.batch,
            args.eta_fraction,
        )
    if args.command == "sweep":
        return cmd_sweep(args.config, args.horizons, args.seeds, args.out, args.workers)
    return cmd_compare_orthogonalizers(
        args.shapes,
        args.trials,
        args.iters,
        args.condition,
        args.prescale,
        args.tolerance,
        args.seed,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return _dispatch(args)
    except DivergedError as exc:
        logger.error("Divergence: {}", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InequalityViolated, IdentityViolated) as exc:
        logger.error("Verification failed: {}", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except _USAGE_ERRORS as exc:
        logger.error("{}: {}", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
