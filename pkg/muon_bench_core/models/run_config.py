"""
Run configuration

A run is described by a YAML file with three sections:

    problem:    kind, shape, spectrum/data parameters, sigma, noise model, seed, R target
    optimizer:  rule, beta, eta or a schedule reference, batch, orthogonalizer
    run:        horizon T, seeds, output directory, inline checks

The file is validated in full before any computation starts.
"""
import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from muon_bench_core.exceptions import ConfigurationError
from muon_bench_core.models.enums import (
    InlineCheck,
    NoiseModel,
    Orthogonalizer,
    ProblemKind,
    Theorem,
    UpdateRule,
)


class ProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ProblemKind = ProblemKind.NOISY_QUADRATIC
    shape: Tuple[int, int] = (4, 3)
    spectrum: Optional[List[float]] = None
    rotate: bool = False
    sigma: float = Field(default=0.0, ge=0.0)
    noise_model: NoiseModel = NoiseModel.GAUSSIAN_ADDITIVE
    seed: int = Field(default=0, ge=0)
    n_samples: int = Field(default=64, ge=1)
    l2: float = Field(default=1e-2, gt=0.0)
    r_target: float = Field(default=1.0, gt=0.0)
    certify_trials: int = Field(default=200, ge=100)

    @field_validator("shape")
    @classmethod
    def _positive_shape(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] < 1 or value[1] < 1:
            raise ValueError("both dimensions must be >= 1")
        return value

    @model_validator(mode="after")
    def _spectrum_matches(self) -> "ProblemConfig":
        if self.spectrum is not None:
            if self.kind is not ProblemKind.NOISY_QUADRATIC:
                raise ValueError("spectrum only applies to noisy_quadratic")
            if len(self.spectrum) != self.shape[0]:
                raise ValueError(f"spectrum needs {self.shape[0]} entries")
        return self


class OptimizerConfig(BaseModel):
    """
    Either a fixed eta or a schedule reference

    With a schedule the runner derives eta (and for thm22 also beta and
    batch) from the certified problem constants.
    """
    model_config = ConfigDict(extra="forbid")

    rule: UpdateRule = UpdateRule.MUON_HEAVY_BALL
    beta: float = Field(default=0.9, ge=0.0, lt=1.0)
    eta: Optional[float] = Field(default=None, gt=0.0)
    schedule: Optional[Theorem] = None
    power: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    eta_fraction: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    batch: int = Field(default=1, ge=1)
    rank_tol: float = Field(default=1e-12, ge=0.0, lt=1.0)
    init_first_full: bool = True
    orthogonalizer: Orthogonalizer = Orthogonalizer.SVD
    ns_iters: int = Field(default=5, ge=1)
    ns_prescale: Literal["frobenius", "spectral"] = "spectral"

    @model_validator(mode="after")
    def _step_size_source(self) -> "OptimizerConfig":
        if (self.eta is None) == (self.schedule is None):
            raise ValueError("set exactly one of eta and schedule")
        if self.schedule is Theorem.THM22_POWER_BATCH and self.power is None:
            raise ValueError("thm22-power-batch needs power")
        if self.schedule is not None and self.schedule.is_thm22:
            if self.rule is not UpdateRule.MUON_HEAVY_BALL:
                raise ValueError("thm22 schedules apply to muon_heavy_ball only")
        if self.schedule is Theorem.THM31 and self.rule is not UpdateRule.SPECTRAL_DESCENT:
            raise ValueError("thm31 schedule applies to spectral_descent only")
        if self.orthogonalizer is Orthogonalizer.NEWTON_SCHULZ and not self.rule.is_muon:
            raise ValueError("newton_schulz orthogonalizer applies to Muon rules only")
        return self


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: int = Field(ge=1)
    seeds: List[int] = Field(min_length=1)
    out_dir: str = "runs/default"
    checks: List[InlineCheck] = Field(default_factory=lambda: list(InlineCheck))
    divergence_threshold: float = Field(default=1e12, gt=0.0)

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, value: List[int]) -> List[int]:
        if len(set(value)) != len(value):
            raise ValueError("seeds must be unique")
        if any(s < 0 for s in value):
            raise ValueError("seeds must be nonnegative")
        return sorted(value)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    optimizer: OptimizerConfig
    run: RunSection

    def canonical_json(self) -> str:
        """Sorted, compact JSON of everything that shapes the numbers (out_dir excluded)"""
        payload = self.model_dump(mode="json", exclude={"run": {"out_dir"}})
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_run(self, **changes) -> "RunConfig":
        """Copy with fields of the run section replaced, re-validated"""
        data = self.model_dump()
        data["run"].update(changes)
        return parse_run_config(data)


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        location = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def parse_run_config(data: dict) -> RunConfig:
    """
    Validate a mapping into a RunConfig

    :raises ConfigurationError: message names every offending field path
    """
    if not isinstance(data, dict):
        raise ConfigurationError("run config must be a mapping with problem/optimizer/run sections")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run config: {_format_validation_error(exc)}") from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a YAML run config"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_run_config(data)
