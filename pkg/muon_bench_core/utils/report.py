"""
Plain-text rendering of schedules, reports and tables for the CLI
"""
from typing import Dict, List, Optional, Sequence

import pandas as pd

from muon_bench_core.models.trace import BoundReport, RateSlopeReport
from muon_bench_core.modules.schedules import ScheduleParams


def _key_values(pairs: Dict[str, object]) -> str:
    width = max(len(key) for key in pairs)
    lines = []
    for key, value in pairs.items():
        if isinstance(value, float):
            value = f"{value:.10g}"
        lines.append(f"{key.ljust(width)} : {value}")
    return "\n".join(lines)


def render_schedule(params: ScheduleParams, terms: Optional[Dict[str, float]] = None) -> str:
    """Schedule parameters, then any bound terms evaluated at them"""
    return _key_values(
        {
            "theorem": params.theorem.value,
            "alpha": params.alpha,
            "beta": params.beta,
            "eta": params.eta,
            "batch": params.batch,
            "valid": "yes" if params.valid else "no",
            **({"reason": params.reason} if params.reason else {}),
            **(terms or {}),
        }
    )


def render_bound_report(report: BoundReport) -> str:
    verdict = "HOLDS" if report.holds else "FAILS"
    head = _key_values(
        {
            "theorem": report.theorem.value,
            "verdict": verdict,
            "lhs (seed mean)": report.lhs_empirical,
            "lhs std. error": report.lhs_standard_error,
            "rhs (explicit)": report.rhs_explicit,
            "slack": report.slack,
            "tolerance": report.statistical_tolerance,
            "seeds": report.seeds,
            "config digest": report.config_digest[:16],
        }
    )
    consts = ", ".join(f"{k}={v:.6g}" for k, v in sorted(report.constants.items()))
    return f"{head}\nconstants: {consts}"


def render_rate_slope(report: RateSlopeReport) -> str:
    table = pd.DataFrame([p.model_dump() for p in report.points])
    lines = [table.to_string(index=False, float_format=lambda v: f"{v:.6g}")]
    lines.append(f"fitted slope: {report.slope:.4f}")
    if report.theoretical_slope is not None:
        lines.append(f"theoretical slope: {report.theoretical_slope:.4f}")
    return "\n".join(lines)


def render_deviation_table(table: pd.DataFrame) -> str:
    return table.to_string(index=False, float_format=lambda v: f"{v:.3e}")


def render_verification(summaries: Sequence[Dict], inline: Sequence[Dict]) -> str:
    """One line per seed: trace-level checks plus inline violation counts from run_meta"""
    inline_by_seed = {entry["seed"]: entry for entry in inline}
    lines: List[str] = []
    for summary in summaries:
        entry = inline_by_seed.get(summary["seed"], {})
        inline_bad = sum(entry.get("inline_violations", {}).values())
        lines.append(
            f"seed {summary['seed']:>6}: {summary['checked']} pair checks, "
            f"{len(summary['violations'])} violations, {summary['bypassed']} bypassed, "
            f"{inline_bad} inline violations"
        )
    return "\n".join(lines)
