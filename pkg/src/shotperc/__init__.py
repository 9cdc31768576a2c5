"""
shotperc - shot noise fields at high intensity

Synthesis of normalised shot noise fields f_λ and their Gaussian limit f on
regular lattices, a dyadic Poisson-Gaussian coupling of the two, truncated
(finite-range) kernels, and Monte Carlo level-set percolation: crossing
probabilities, finite-size critical levels, sprinkled decoupling and the
Kesten union bound.

Installation:
    pip install shotperc

Usage:
    from shotperc import Kernel, ModelSpec, BoxRegion, RngStream, crossing_probability

    kernel = Kernel.rational(beta=3.0)
    model = ModelSpec.shot_noise(kernel, lam=64.0)
    est = crossing_probability(model, 0.0, BoxRegion((0, 0), (8, 8)), Orientation.LR,
                               n_reps=200, seed=1)

Command line:
    shotperc coupling_rate --config coupling.toml --seed 1 --out rate.csv
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, ExperimentKind, load_config
from .coupling import (
    BinaryExpansion,
    CoupledFieldPair,
    build_binary_expansion,
    couple_fields,
    couple_poisson_gaussian,
    q_modulus,
)
from .errors import (
    ConfigError,
    GeometryError,
    InvalidArgumentError,
    NumericalConsistencyError,
    PreconditionError,
    ReportError,
    ShotPercError,
)
from .experiments import run_experiment
from .field_synthesis import (
    GridField,
    GridSpec,
    c1_norm,
    dump_field,
    load_field,
    sup_norm_diff,
    synthesize_gaussian,
    synthesize_shot_noise,
)
from .kernel import Kernel, TruncatedKernel, covariance, eval_kernel
from .kesten import kesten_check, kesten_geometry
from .model import FieldKind, ModelSpec
from .percolation import (
    Connectivity,
    Orientation,
    crossing,
    crossing_probability,
    estimate_critical_level,
    excursion,
    sprinkling_check,
)
from .point_process import BoxRegion, PointConfiguration, compensated_integral, sample_poisson
from .report import emit_csv, read_csv
from .rng import Purpose, RngStream
from .stats import RateFit, fit_loglog

__all__ = [
    "ExperimentConfig",
    "ExperimentKind",
    "load_config",
    "BinaryExpansion",
    "CoupledFieldPair",
    "build_binary_expansion",
    "couple_fields",
    "couple_poisson_gaussian",
    "q_modulus",
    "ConfigError",
    "GeometryError",
    "InvalidArgumentError",
    "NumericalConsistencyError",
    "PreconditionError",
    "ReportError",
    "ShotPercError",
    "run_experiment",
    "GridField",
    "GridSpec",
    "c1_norm",
    "dump_field",
    "load_field",
    "sup_norm_diff",
    "synthesize_gaussian",
    "synthesize_shot_noise",
    "Kernel",
    "TruncatedKernel",
    "covariance",
    "eval_kernel",
    "kesten_check",
    "kesten_geometry",
    "FieldKind",
    "ModelSpec",
    "Connectivity",
    "Orientation",
    "crossing",
    "crossing_probability",
    "estimate_critical_level",
    "excursion",
    "sprinkling_check",
    "BoxRegion",
    "PointConfiguration",
    "compensated_integral",
    "sample_poisson",
    "emit_csv",
    "read_csv",
    "Purpose",
    "RngStream",
    "RateFit",
    "fit_loglog",
]
