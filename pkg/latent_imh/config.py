"""Experiment configuration schema and runtime settings"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from latent_imh.constants import (
    CONFIG_SCHEMA_VERSION,
    DEFAULT_EXACT_TOL,
    DEFAULT_MALA_STEP,
    DEFAULT_MIXTURE_SPREAD,
    DEFAULT_PRIOR_CONDITION,
    DEFAULT_TV_EPS,
    DEFAULT_WARMUP,
    INNER_STEPS,
    INNER_WARMUP,
)
from latent_imh.exceptions import ConfigError
from latent_imh.models import HelmholtzGrid, PcgSettings

logger = logging.getLogger(__name__)

SamplerName = Literal["latent-imh", "approx-imh", "mala", "nuts", "two-stage-approx", "two-stage-latent"]
SweepParameter = Literal["log10_snr", "spectral_error", "d_y", "d"]


class Settings(BaseSettings):
    """Runtime settings read from the environment (LATENT_IMH_*) or .env"""
    model_config = SettingsConfigDict(env_prefix="LATENT_IMH_", env_file=".env", extra="ignore")

    threads: int = Field(default=1, ge=1, description="Worker threads used to run chains")


class PriorConfig(BaseModel):
    """Prior of the synthetic and graph families"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["standard-normal", "gaussian", "mixture", "laplace"] = "standard-normal"
    condition_number: float = Field(default=DEFAULT_PRIOR_CONDITION, ge=1, description="Covariance condition number for kind=gaussian")
    mixture_spread: float = Field(default=DEFAULT_MIXTURE_SPREAD, ge=0, description="Outermost mixture mean along the first coordinate")
    n_components: int = Field(default=3, ge=1)


class DiagonalProblemConfig(BaseModel):
    """F = V diag(1/i^2) V^T with a multiplicatively perturbed F_tilde"""
    model_config = ConfigDict(extra="forbid")

    family: Literal["diagonal"] = "diagonal"
    d: int = Field(default=500, ge=1)
    d_y: int = Field(default=100, ge=1)
    spectral_error: float = Field(default=0.06, ge=0, description="Target ||I - F_tilde^{-1} F||_2")
    log10_snr: float = Field(default=2.5, gt=0, description="log10 of E||y||^2 / E||e||^2")
    prior: PriorConfig = Field(default_factory=PriorConfig)

    @model_validator(mode="after")
    def _check_dims(self) -> "DiagonalProblemConfig":
        if self.d_y > self.d:
            raise ValueError(f"d_y ({self.d_y}) must not exceed d ({self.d})")
        return self


class GraphProblemConfig(BaseModel):
    """k-nearest-neighbour graph Laplacian on a cubic lattice solved by PCG"""
    model_config = ConfigDict(extra="forbid")

    family: Literal["graph-laplacian"] = "graph-laplacian"
    lattice_side: int = Field(default=10, ge=2)
    k_neighbors: int = Field(default=6, ge=1)
    d_x: int = Field(default=100, ge=1)
    d_y: int = Field(default=20, ge=1)
    pcg: PcgSettings = Field(default_factory=lambda: PcgSettings(tolerance=1e-2))
    exact_tol: float = Field(default=DEFAULT_EXACT_TOL, gt=0, lt=1)
    noise_level: float = Field(default=0.05, gt=0, description="Relative noise ||e|| / ||A x_true||")
    prior: PriorConfig = Field(default_factory=PriorConfig)

    @model_validator(mode="after")
    def _check_dims(self) -> "GraphProblemConfig":
        if self.d_x > self.lattice_side**3:
            raise ValueError(f"d_x ({self.d_x}) must not exceed lattice_side^3 ({self.lattice_side**3})")
        if self.d_y > self.d_x:
            raise ValueError(f"d_y ({self.d_y}) must not exceed d_x ({self.d_x})")
        return self


class TvConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lam: float = Field(..., gt=0, description="TV weight lambda")
    eps: float = Field(default=DEFAULT_TV_EPS, gt=0, description="Smoothing epsilon")


class HelmholtzProblemConfig(BaseModel):
    """Real shifted Helmholtz operator with a coarse-grid approximation"""
    model_config = ConfigDict(extra="forbid")

    family: Literal["helmholtz"] = "helmholtz"
    grid: HelmholtzGrid = Field(default_factory=HelmholtzGrid)
    tv: TvConfig
    noise_level: float = Field(default=0.1, gt=0, description="Relative noise ||e|| / ||A x_true||")


ProblemConfig = Annotated[
    Union[DiagonalProblemConfig, GraphProblemConfig, HelmholtzProblemConfig],
    Field(discriminator="family"),
]


class SamplerConfig(BaseModel):
    """One sampler of an experiment"""
    model_config = ConfigDict(extra="forbid")

    name: SamplerName
    inner: Optional[Literal["exact-gaussian", "exact-mixture", "inner-nuts"]] = Field(
        default=None, description="IMH proposal sampler; chosen from the prior when omitted"
    )
    latent_mode: Literal["linear", "black-box"] = "linear"
    inner_steps: int = Field(default=INNER_STEPS, ge=1)
    inner_warmup: int = Field(default=INNER_WARMUP, ge=0)
    step: float = Field(default=DEFAULT_MALA_STEP, gt=0, description="Initial MALA step size")
    adapt: bool = True
    n_warmup: int = Field(default=DEFAULT_WARMUP, ge=0)
    target_accept: Optional[float] = Field(default=None, gt=0, lt=1, description="Defaults to 0.45 for NUTS, 0.5 for MALA")


class SweepConfig(BaseModel):
    """Grid over one parameter of the diagonal family"""
    model_config = ConfigDict(extra="forbid")

    parameter: SweepParameter
    values: List[float] = Field(..., min_length=1)

    def apply(self, problem: DiagonalProblemConfig, value: float) -> DiagonalProblemConfig:
        """Problem config with the swept parameter set to value"""
        cast = int(value) if self.parameter in ("d", "d_y") else float(value)
        return DiagonalProblemConfig.model_validate({**problem.model_dump(), self.parameter: cast})


class ExperimentConfig(BaseModel):
    """Problem, samplers and run length of one experiment"""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = CONFIG_SCHEMA_VERSION
    problem: ProblemConfig
    samplers: List[SamplerConfig] = Field(..., min_length=1)
    n_steps: Optional[int] = Field(default=None, ge=1)
    solve_budget: Optional[int] = Field(default=None, ge=1, description="Counted solves per chain")
    max_steps: Optional[int] = Field(default=None, ge=1, description="Row cap in budget mode")
    checkpoints: Optional[List[int]] = None
    n_chains: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    output_dir: str = "results"
    reference_draws: int = Field(default=20_000, ge=2, description="Ground-truth draws for MMD and non-Gaussian moments")
    mmd_max_points: int = Field(default=1_000, ge=2)
    dump_samples: bool = False
    sweep: Optional[SweepConfig] = None

    @model_validator(mode="after")
    def _check_run(self) -> "ExperimentConfig":
        if (self.n_steps is None) == (self.solve_budget is None):
            raise ValueError("exactly one of n_steps and solve_budget must be set")
        names = [s.name for s in self.samplers]
        if len(set(names)) != len(names):
            raise ValueError(f"sampler names must be unique, got {names}")
        if self.checkpoints is not None:
            cps = self.checkpoints
            if not cps or cps[0] < 1:
                raise ValueError("checkpoints must be positive")
            if any(b <= a for a, b in zip(cps[:-1], cps[1:])):
                raise ValueError("checkpoints must be strictly increasing")
            if cps[-1] > self.horizon:
                raise ValueError(f"last checkpoint {cps[-1]} exceeds the run length {self.horizon}")
        if self.sweep is not None and self.problem.family != "diagonal":
            raise ValueError("sweeps are only defined for the diagonal family")
        return self

    @property
    def horizon(self) -> int:
        """Maximum number of recorded rows per chain"""
        if self.n_steps is not None:
            return self.n_steps
        return self.max_steps or self.solve_budget

    def checkpoint_schedule(self) -> List[int]:
        """Configured checkpoints, or a geometric grid ending at the horizon"""
        if self.checkpoints is not None:
            return list(self.checkpoints)
        start = min(10, self.horizon)
        grid = np.unique(np.geomspace(start, self.horizon, num=20).round().astype(int))
        return [int(c) for c in grid]


def _first_error(e: ValidationError) -> ConfigError:
    err = e.errors()[0]
    field = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
    return ConfigError(field, err.get("msg", str(e)))


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a config dict, raising ConfigError naming the offending field"""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise _first_error(e) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a JSON config file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("path", f"cannot read {path}: {e}") from e
    try:
        config = ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise _first_error(e) from e
    logger.debug(f"Loaded config from {path}")
    return config


def dump_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2)


def with_overrides(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Copy of config with the non-None overrides applied and re-validated"""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return config
    return parse_config({**config.model_dump(mode="json"), **updates})


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form, independent of the output directory"""
    payload = json.dumps(config.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
