"""
Configuration

Two layers:
1. Process settings from the environment (.env supported), e.g. the default
   worker count and log level.
2. Experiment configuration: a TOML file validated by a pydantic model, with
   `--set key=value` overrides applied on top (overrides win).

Example config:

    experiment = "coupling_rate"
    seed = 12345
    replicas = 200
    lambdas = [16, 64, 256, 1024]
    R = [8.0]
    kernel = {family = "rational", beta = 3.0}
"""

import logging
import math
import os
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .kernel import Kernel, KernelFamily

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

load_dotenv()

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    """Process-wide defaults read from the environment"""
    threads: int = int(os.getenv("SHOTPERC_THREADS", 1))
    log_level: str = os.getenv("SHOTPERC_LOG_LEVEL", "INFO")
    tail_tol: float = float(os.getenv("SHOTPERC_TAIL_TOL", 1e-2))


settings = Settings()


class ExperimentKind(str, Enum):
    MARGINAL_CLT = "marginal_clt"
    COUPLING_RATE = "coupling_rate"
    TRUNCATION_RATE = "truncation_rate"
    C1_TAILS = "c1_tails"
    LC_SWEEP = "lc_sweep"
    THRESHOLD_CURVE = "threshold_curve"
    SPRINKLE = "sprinkle"
    KESTEN = "kesten"
    DUALITY_AUDIT = "duality_audit"
    DERIVATIVE_COUPLING = "derivative_coupling"
    POISSON_GAUSSIAN_TAIL = "poisson_gaussian_tail"
    EPSILON_STABILITY = "epsilon_stability"
    COVARIANCE_ORACLE = "covariance_oracle"
    QM_BOUNDS = "qm_bounds"


class KernelSpec(BaseModel):
    """Kernel section of the config: {family = "rational", beta = 3.0}"""
    model_config = ConfigDict(extra="forbid")

    family: KernelFamily = KernelFamily.RATIONAL
    beta: Optional[float] = 3.0
    gamma: Optional[float] = None
    dimension: int = 2

    def build(self) -> Kernel:
        if self.family == KernelFamily.RATIONAL:
            return Kernel.rational(self.beta, self.dimension)
        return Kernel.stretched_exp(self.gamma, self.dimension)


class ExperimentConfig(BaseModel):
    """
    Validated experiment configuration

    Lists are the parameter grids the experiment sweeps; an experiment reads
    only the lists it needs but every list must be non-empty.
    """
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    experiment: ExperimentKind
    kernel: KernelSpec = Field(default_factory=KernelSpec)
    lambdas: List[float] = Field(default_factory=lambda: [16.0, 64.0, 256.0, 1024.0])
    box_sizes: List[float] = Field(default_factory=lambda: [8.0], alias="R")
    ranges: List[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0, 16.0], alias="r")
    epsilon: Optional[float] = None
    depth: Optional[int] = Field(default=None, alias="m")
    level: float = Field(default=0.0, alias="ell")
    replicas: int = 200
    seed: int = 0
    output: Optional[Path] = None
    threads: Optional[int] = None

    @field_validator("lambdas", "box_sizes", "ranges")
    @classmethod
    def _positive_nonempty(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("list must be non-empty")
        if any(not math.isfinite(x) or x <= 0 for x in v):
            raise ValueError("all entries must be finite and positive")
        return v

    @field_validator("replicas")
    @classmethod
    def _enough_replicas(cls, v: int) -> int:
        if v < 30:
            raise ValueError("replicas must be >= 30")
        return v

    @field_validator("seed")
    @classmethod
    def _seed_u64(cls, v: int) -> int:
        if not 0 <= v <= 2**64 - 1:
            raise ValueError("seed must be a 64-bit unsigned value")
        return v

    @field_validator("epsilon")
    @classmethod
    def _epsilon_lattice(cls, v: Optional[float]) -> Optional[float]:
        if v is None:
            return v
        if v <= 0 or abs(1.0 / v - round(1.0 / v)) > 1e-9:
            raise ValueError("epsilon must be 1/n for a positive integer n")
        return v

    @field_validator("depth")
    @classmethod
    def _depth_range(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and not 0 <= v <= 24:
            raise ValueError("m must lie in [0, 24]")
        return v

    @field_validator("threads")
    @classmethod
    def _threads_positive(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("threads must be >= 1")
        return v

    def echo(self) -> Dict[str, Any]:
        """Config as plain data, for report headers"""
        return self.model_dump(mode="json", by_alias=True, exclude={"output", "threads"})


def parse_override(item: str) -> tuple:
    """
    Parse one `--set key=value` item

    The value uses TOML syntax (numbers, strings, arrays, inline tables);
    anything that does not parse as TOML is taken as a bare string.
    """
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value", [item])
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{item}' has an empty key", [item])
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply dotted-key overrides to a nested dict (returns a new dict)"""
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for item in overrides:
        key, value = parse_override(item)
        node = merged
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return merged


def _format_problems(err: ValidationError) -> List[str]:
    problems = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        problems.append(f"{loc}: {e['msg']}")
    return problems


def build_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate plain data; every violated field is listed in the ConfigError"""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        problems = _format_problems(e)
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems), problems) from e


def load_config(
    path: Optional[Path],
    overrides: Sequence[str] = (),
    experiment: Optional[str] = None,
    flags: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Load a TOML config file, apply overrides, validate

    Args:
        path: TOML file (None means start from defaults)
        overrides: `key=value` strings, applied in order
        experiment: experiment name from the command line (wins over the file)
        flags: values of dedicated command-line flags (win over file and overrides)

    Returns:
        ExperimentConfig
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}", [str(path)]) from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config {path} is not valid TOML: {e}", [str(path)]) from e
    data = apply_overrides(data, overrides)
    for key, value in (flags or {}).items():
        if value is not None:
            data[key] = value
    if experiment is not None:
        data["experiment"] = experiment
    cfg = build_config(data)
    logger.debug(f"Loaded config for {cfg.experiment.value} (seed={cfg.seed})")
    return cfg
