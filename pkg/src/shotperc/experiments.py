"""
Experiments

One runner per ExperimentKind. A runner turns a validated ExperimentConfig
into report rows (plain dicts in the experiment's schema); run_experiment
owns the worker pool, writes the CSV and the `<out>.log` sidecar.

Randomness is keyed by (seed, purpose, replica[, cell]) only, so every
parameter point of a sweep reuses the same replica streams (common random
numbers across λ, r, R and ℓ).
"""

import logging
import math
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, ExperimentKind, settings
from .coupling import (
    BinaryExpansion,
    couple_derivatives,
    couple_fields,
    gradient_l2,
    poincare_constant,
    poisson_quantile,
    q_modulus,
    q_profile,
)
from .errors import InvalidArgumentError
from .field_synthesis import (
    GridSpec,
    c1_norm,
    check_pad,
    synthesize_gaussian,
    synthesize_shot_noise,
    sup_norm_diff,
)
from .kernel import (
    CovarianceGrid,
    Kernel,
    ball_energy,
    ball_integral,
    closed_form_variance,
    covariance_fft,
    covariance_quadrature,
    eval_kernel,
    sigma_d,
    variance,
    zero_index,
)
from .kesten import kesten_check
from .model import ModelSpec
from .percolation import (
    Connectivity,
    CrossingEstimate,
    CrossingEvent,
    Orientation,
    crosses,
    crossing,
    crossing_thresholds,
    epsilon_stability,
    estimate_critical_level,
    excursion,
    replica_stream,
    sprinkling_check,
)
from .point_process import BoxRegion, compensated_integral, sample_poisson
from .pool import ReplicaPool, replica_map
from .report import Schema, emit_csv, write_run_log
from .rng import Purpose, RngStream
from .stats import (
    InequalityReport,
    fit_loglinear,
    fit_loglog,
    ks_distance,
    mean_stderr,
    median_stderr,
    wilson_interval,
)

logger = logging.getLogger(__name__)

Row = Dict[str, Any]
Runner = Callable[[ExperimentConfig, ReplicaPool], List[Row]]

# Side of the box [0, s]^d on which sup norms of coupled differences are taken
SUP_BOX = 4.0
C1_LEVELS = (2.0, 3.0, 4.0, 5.0, 6.0)
C1_SCALED_LEVELS = (1.0, 2.0, 3.0)
TAIL_GAPS = (2.0, 4.0, 6.0, 8.0)
THRESHOLD_OFFSETS = (-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0)
CRITICAL_TOL = 0.01  # bisection tolerance, in units of √K(0)
MASK_SIDE = 32
QM_MAX_DEPTH = 12

# Lattice lags of the covariance probe, in units of the covariance grid spacing
COVARIANCE_LAGS = (
    (0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1), (3, 2), (4, 0), (4, 4), (5, 3),
    (8, 0), (0, 8), (6, 7), (10, 5), (12, 12), (16, 0), (16, 8), (20, 10), (24, 0), (32, 16),
)


def _row(
    cfg: ExperimentConfig,
    statistic: str,
    value: Any,
    stderr: Optional[float] = None,
    lam: Optional[float] = None,
    R: Optional[float] = None,
    r: Optional[float] = None,
    epsilon: Optional[float] = None,
    replicas: Optional[int] = None,
    **extra: Any,
) -> Row:
    row = {
        "experiment": cfg.experiment.value,
        "lambda": lam,
        "R": R,
        "r": r,
        "epsilon": epsilon,
        "replicas": cfg.replicas if replicas is None else replicas,
        "statistic": statistic,
        "value": value,
        "stderr": stderr,
        "seed": cfg.seed,
    }
    row.update(extra)
    return row


def _inequality_rows(
    cfg: ExperimentConfig, report: InequalityReport, prefix: str = "", **keys: Any
) -> List[Row]:
    return [
        _row(cfg, f"{prefix}lhs", report.lhs, **keys),
        _row(cfg, f"{prefix}rhs", report.rhs, **keys),
        _row(cfg, f"{prefix}slack", report.slack, report.stderr, **keys),
        _row(cfg, f"{prefix}holds", int(report.holds), **keys),
    ]


def _box(side: float, d: int) -> BoxRegion:
    return BoxRegion((0.0,) * d, (float(side),) * d)


def _square(side: float) -> BoxRegion:
    return BoxRegion((0.0, 0.0), (float(side), float(side)))


def _kernel(cfg: ExperimentConfig) -> Kernel:
    return cfg.kernel.build()


def _shot(cfg: ExperimentConfig, lam: float, **kwargs) -> ModelSpec:
    return ModelSpec.shot_noise(_kernel(cfg), lam, epsilon=cfg.epsilon, **kwargs)


def _gauss(cfg: ExperimentConfig, **kwargs) -> ModelSpec:
    return ModelSpec.gaussian(_kernel(cfg), epsilon=cfg.epsilon, **kwargs)


def _field_models(cfg: ExperimentConfig) -> List[Tuple[str, Optional[float], ModelSpec]]:
    """The Gaussian field followed by the shot noise field at every λ"""
    models = [("gaussian", None, _gauss(cfg))]
    models += [("shot_noise", lam, _shot(cfg, lam)) for lam in cfg.lambdas]
    return models


def _sprinkling_h(cfg: ExperimentConfig, box_size: float) -> float:
    """h(R) = R^{-(β-2)/2}"""
    return box_size ** (-(_kernel(cfg).beta - 2.0) / 2.0)


def _try_fit(fit: Callable, x: Sequence[float], y: Sequence[float], what: str):
    try:
        return fit(x, y)
    except InvalidArgumentError as e:
        logger.warning(f"skipping {what} fit: {e}")
        return None


# ============================================================================
# FIELD EXPERIMENTS
# ============================================================================


def run_marginal_clt(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """
    f_λ(0) by direct summation over the points in B(pad), against
    N(0, ∫_{B(pad)} g²)
    """
    k = _kernel(cfg)
    d = k.dimension
    pad = check_pad(k, None)
    window = BoxRegion((-pad,) * d, (pad,) * d)
    target_var = ball_energy(k, pad)
    mass = ball_integral(k, zero_index(d), pad)

    def windowed(x: np.ndarray) -> np.ndarray:
        values = eval_kernel(k, zero_index(d), x)
        return np.where(np.linalg.norm(x, axis=-1) <= pad, values, 0.0)

    rows = []
    for lam in cfg.lambdas:

        def one(i: int) -> float:
            stream = RngStream(cfg.seed).child(Purpose.SCALAR, i)
            return compensated_integral(sample_poisson(window, lam, stream), windowed, mass)

        samples = np.asarray(replica_map(one, cfg.replicas, pool))
        mean, mean_se = mean_stderr(samples)
        var = float(samples.var(ddof=1))
        var_se = var * math.sqrt(2.0 / (samples.size - 1))
        ks = ks_distance(samples, math.sqrt(target_var))
        logger.info(f"marginal_clt λ={lam:g}: KS distance {ks:.4f}")
        rows += [
            _row(cfg, "ks_distance", ks, lam=lam, pad=pad),
            _row(cfg, "mean", mean, mean_se, lam=lam, pad=pad),
            _row(cfg, "variance", var, var_se, lam=lam, pad=pad),
            _row(cfg, "variance_target", target_var, lam=lam, pad=pad),
        ]
    return rows


def run_coupling_rate(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """Median sup-norm error of coupled (f_λ, f) over [0,4]^d, against independent synthesis"""
    k = _kernel(cfg)
    d = k.dimension
    region = _box(SUP_BOX, d)
    grid = GridSpec(region, _gauss(cfg).spacing)
    rows = []
    medians = []
    for lam in cfg.lambdas:

        def one(i: int) -> Tuple[float, float, int]:
            stream = RngStream(cfg.seed).child(Purpose.COUPLING, i)
            pair = couple_fields(k, lam, grid, cfg.depth, None, stream, keep_cells=False)
            shot = synthesize_shot_noise(
                k, zero_index(d), lam, grid, None, replica_stream(cfg.seed, i)
            )
            gauss = synthesize_gaussian(
                k, zero_index(d), grid, None, replica_stream(cfg.seed, i, Purpose.BASELINE)
            )
            coupled = sup_norm_diff(pair.shot, pair.gauss, region)
            return coupled, sup_norm_diff(shot, gauss, region), pair.depth

        results = replica_map(one, cfg.replicas, pool)
        coupled = np.array([c for c, _, _ in results])
        baseline = np.array([b for _, b, _ in results])
        m = results[0][2]
        med, med_se = median_stderr(coupled)
        base, base_se = median_stderr(baseline)
        gap, gap_se = mean_stderr(baseline - coupled)
        medians.append(med)
        logger.info(f"coupling_rate λ={lam:g}: median error {med:.4g} (baseline {base:.4g})")
        keys = dict(lam=lam, epsilon=grid.epsilon, m=m)
        rows += [
            _row(cfg, "median_error", med, med_se, **keys),
            _row(cfg, "median_baseline", base, base_se, **keys),
            _row(cfg, "paired_gap", gap, gap_se, **keys),
            _row(cfg, "sigma_d", sigma_d(lam, d), **keys),
        ]
    fit = _try_fit(fit_loglog, cfg.lambdas, medians, "coupling rate")
    if fit is not None:
        rows.append(_row(cfg, "slope", fit.slope, fit.slope_stderr, epsilon=grid.epsilon))
        rows.append(_row(cfg, "r_squared", fit.r_squared, epsilon=grid.epsilon))
    return rows


def run_truncation_rate(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """Median ‖f - f^r‖ over [0,4]^d on shared cell randomness, shot noise and Gaussian"""
    k = _kernel(cfg)
    d = k.dimension
    region = _box(SUP_BOX, d)
    rows = []
    targets = {"shot_noise": d - k.beta, "gaussian": d / 2.0 - k.beta}
    for lam in cfg.lambdas:
        families = {
            "shot_noise": lambda r: _shot(cfg, lam, truncation_range=r),
            "gaussian": lambda r: _gauss(cfg, truncation_range=r),
        }
        for name, make in families.items():
            full = make(None)
            medians = []
            for r in cfg.ranges:
                truncated = make(r)

                def one(i: int) -> float:
                    stream = replica_stream(cfg.seed, i)
                    a = full.sample(region, stream)
                    b = truncated.sample(region, stream)
                    return sup_norm_diff(a, b, region)

                errors = replica_map(one, cfg.replicas, pool)
                med, se = median_stderr(errors)
                medians.append(med)
                rows.append(
                    _row(cfg, "median_error", med, se, lam=lam, r=r,
                         epsilon=full.spacing, field=name)
                )
            fit = _try_fit(fit_loglog, cfg.ranges, medians, f"{name} truncation")
            if fit is not None:
                rows.append(
                    _row(cfg, "slope", fit.slope, fit.slope_stderr, lam=lam, field=name)
                )
            rows.append(_row(cfg, "target_slope", targets[name], lam=lam, field=name))
    return rows


def _tail_rows(
    cfg: ExperimentConfig,
    norms: np.ndarray,
    statistic: str,
    levels: Sequence[float],
    unit: float,
    **keys: Any,
) -> Tuple[List[Row], List[float]]:
    rows, fractions = [], []
    for u in levels:
        hits = int(np.sum(norms >= u * unit))
        lo, hi = wilson_interval(hits, norms.size)
        fractions.append(hits / norms.size)
        rows.append(_row(cfg, statistic, hits / norms.size, (hi - lo) / 2.0, u=u, **keys))
    return rows, fractions


def run_c1_tails(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """
    Tails of ‖f‖_{C¹([0,R]^d)} for the Gaussian field and shot noise

    tail_fraction is P̂[‖f‖ ≥ u√K(0)] for u in C1_LEVELS, with the slope and
    r_squared of log P̂ against u². Shot noise also gets scaled_tail_fraction,
    P̂[‖f_λ‖ ≥ u·λ^{1/2}] for u in C1_SCALED_LEVELS, and scaled_tail_decreasing
    (1 when it strictly decreases in u).
    """
    k = _kernel(cfg)
    scale = math.sqrt(variance(k))
    rows = []
    for box_size in cfg.box_sizes:
        region = _box(box_size, k.dimension)
        for name, lam, model in _field_models(cfg):

            def one(i: int) -> float:
                return c1_norm(model.sample(region, replica_stream(cfg.seed, i)), region)

            norms = np.asarray(replica_map(one, cfg.replicas, pool))
            keys = {"lam": lam, "R": box_size, "epsilon": model.spacing, "field": name}
            tail, fractions = _tail_rows(cfg, norms, "tail_fraction", C1_LEVELS, scale, **keys)
            rows += tail
            u2 = [u * u for u in C1_LEVELS]
            fit = _try_fit(fit_loglinear, u2, fractions, f"{name} C1 tail")
            if fit is not None:
                rows += [
                    _row(cfg, "tail_slope", fit.slope, fit.slope_stderr, **keys),
                    _row(cfg, "r_squared", fit.r_squared, **keys),
                ]
            if lam is None:
                continue
            scaled, fractions = _tail_rows(
                cfg, norms, "scaled_tail_fraction", C1_SCALED_LEVELS, math.sqrt(lam), **keys
            )
            decreasing = all(a > b for a, b in zip(fractions, fractions[1:]))
            rows += scaled
            rows.append(_row(cfg, "scaled_tail_decreasing", int(decreasing), **keys))
            logger.info(
                f"c1_tails λ={lam:g} R={box_size:g}: scaled tail "
                + ", ".join(f"{p:.3f}" for p in fractions)
            )
    return rows


def run_derivative_coupling(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """Median ‖∂_i f_λ - ∂_i f‖ over [0,4]^d for every first-order derivative"""
    k = _kernel(cfg)
    d = k.dimension
    region = _box(SUP_BOX, d)
    grid = GridSpec(region, _gauss(cfg).spacing)
    alphas = [tuple(1 if a == i else 0 for a in range(d)) for i in range(d)]
    medians: Dict[Tuple[int, ...], List[float]] = {a: [] for a in alphas}
    rows = []
    for lam in cfg.lambdas:

        def one(i: int) -> Tuple[List[float], int]:
            stream = RngStream(cfg.seed).child(Purpose.COUPLING, i)
            pairs = couple_derivatives(k, lam, grid, stream, alphas, cfg.depth)
            errors = [sup_norm_diff(pairs[a].shot, pairs[a].gauss, region) for a in alphas]
            return errors, pairs[alphas[0]].depth

        results = replica_map(one, cfg.replicas, pool)
        errors = np.array([e for e, _ in results])
        m = results[0][1]
        for j, alpha in enumerate(alphas):
            med, se = median_stderr(errors[:, j])
            medians[alpha].append(med)
            rows.append(
                _row(cfg, "median_error", med, se, lam=lam, epsilon=grid.epsilon,
                     alpha=_alpha_label(alpha), m=m)
            )
    for alpha in alphas:
        fit = _try_fit(fit_loglog, cfg.lambdas, medians[alpha], f"derivative {alpha}")
        if fit is not None:
            rows.append(
                _row(cfg, "slope", fit.slope, fit.slope_stderr, alpha=_alpha_label(alpha))
            )
    return rows


def _alpha_label(alpha: Sequence[int]) -> str:
    return ";".join(str(a) for a in alpha)


def run_poisson_gaussian_tail(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """P[|N - λ - √λ Z| ≥ t] for the quantile coupling N = F_λ^{-1}(Φ(Z))"""
    rows = []
    for index, lam in enumerate(cfg.lambdas):
        gen = RngStream(cfg.seed).child(Purpose.SCALAR, index).generator()
        z = gen.standard_normal(cfg.replicas)
        n = poisson_quantile(lam, z)
        gap = np.abs(n - lam - math.sqrt(lam) * z)
        mean, se = mean_stderr(gap)
        rows.append(_row(cfg, "mean_abs_gap", mean, se, lam=lam))
        fractions = []
        for t in TAIL_GAPS:
            hits = int(np.sum(gap >= t))
            lo, hi = wilson_interval(hits, gap.size)
            fractions.append(hits / gap.size)
            rows.append(_row(cfg, "tail_fraction", hits / gap.size, (hi - lo) / 2.0, lam=lam, t=t))
        fit = _try_fit(fit_loglinear, TAIL_GAPS, fractions, "coupling tail")
        if fit is not None:
            rows.append(_row(cfg, "tail_slope", fit.slope, fit.slope_stderr, lam=lam))
    return rows


def run_covariance_oracle(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """Quadrature against FFT covariance at lattice lags, and K(0) against its closed form"""
    k = _kernel(cfg)
    d = k.dimension
    grid = CovarianceGrid()
    rows = []
    exact = closed_form_variance(k)
    quad0, err0 = covariance_quadrature(k, np.zeros(d), grid)
    if exact is not None:
        rows.append(_row(cfg, "variance_closed_form", exact, replicas=0))
        rows.append(_row(cfg, "variance_abs_diff", abs(quad0 - exact), err0, replicas=0))
    lags = sorted({lag[:d] for lag in COVARIANCE_LAGS}) if d < 2 else list(COVARIANCE_LAGS)

    def one(lag: Tuple[int, ...]) -> Tuple[float, float, float, float]:
        x = np.asarray(lag, dtype=float) * grid.spacing
        return covariance_quadrature(k, x, grid) + covariance_fft(k, x, grid)

    worst = 0.0
    for lag, (qv, qe, fv, fe) in zip(lags, pool.map(one, lags)):
        x = [v * grid.spacing for v in lag]
        keys = dict(replicas=0, lag_x=x[0], lag_y=x[1] if d > 1 else None)
        rows += [
            _row(cfg, "quadrature", qv, qe, **keys),
            _row(cfg, "fft", fv, fe, **keys),
            _row(cfg, "abs_diff", abs(qv - fv), **keys),
        ]
        worst = max(worst, abs(qv - fv))
    rows.append(_row(cfg, "max_abs_diff", worst, replicas=0))
    return rows


# Smooth test functions on [0,1]^2, vectorized over (..., 2)
QM_TEST_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "x1": lambda x: x[..., 0],
    "x1*x2": lambda x: x[..., 0] * x[..., 1],
    "sin_cos": lambda x: np.sin(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1]),
    "exp_sum": lambda x: np.exp(x[..., 0] + x[..., 1]),
    "radius2": lambda x: x[..., 0] ** 2 + x[..., 1] ** 2,
}


def run_qm_bounds(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """q_m(h) against 2√(d·c_d)·‖∇h‖_{L²}·√(m+1) for m ≤ 12"""
    d = 2
    depth = QM_MAX_DEPTH if cfg.depth is None else min(cfg.depth, QM_MAX_DEPTH)
    expansion = BinaryExpansion(d, depth)
    c_d = poincare_constant(BinaryExpansion(d, max(depth, d)))
    names = list(QM_TEST_FUNCTIONS)

    def one(name: str) -> Tuple[np.ndarray, float]:
        h = QM_TEST_FUNCTIONS[name]
        return q_profile(h, expansion), gradient_l2(h, d)

    rows = [
        _row(cfg, "q0_identity_1d", q_modulus(lambda x: x[..., 0], BinaryExpansion(1, 0), 0),
             replicas=0, test_function="x", m=0),
        _row(cfg, "poincare_constant", c_d, replicas=0),
    ]
    for name, (profile, grad) in zip(names, pool.map(one, names)):
        for m, q in enumerate(profile):
            bound = 2.0 * math.sqrt(d * c_d) * grad * math.sqrt(m + 1)
            keys = dict(replicas=0, test_function=name, m=m)
            rows += [_row(cfg, "q_m", float(q), **keys), _row(cfg, "bound", bound, **keys)]
    return rows


# ============================================================================
# PERCOLATION EXPERIMENTS
# ============================================================================


def run_lc_sweep(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """
    Finite-size critical level of the Gaussian field and of f_λ per λ, with the
    λ^{-1/2}(log λ)^{3/2} envelope fitted at the smallest λ
    """
    rows = []
    for box_size in cfg.box_sizes:
        levels = []
        for name, lam, model in _field_models(cfg):
            tol = CRITICAL_TOL * math.sqrt(model.variance())
            est = estimate_critical_level(model, box_size, cfg.replicas, tol, cfg.seed, pool)
            rows.append(
                _row(cfg, "critical_level", est.level, est.stderr, lam=lam, R=box_size,
                     epsilon=model.spacing, field=name,
                     bracket_lo=est.bracket[0], bracket_hi=est.bracket[1])
            )
            if lam is not None:
                levels.append((lam, abs(est.level)))
        if not levels:
            continue
        lam0, level0 = min(levels)
        constant = level0 / _critical_envelope(lam0)
        for lam, level in levels:
            rows.append(
                _row(cfg, "envelope", constant * _critical_envelope(lam), lam=lam,
                     R=box_size, field="shot_noise")
            )
        fit = _try_fit(fit_loglog, [lam for lam, _ in levels], [v for _, v in levels],
                       "critical level")
        if fit is not None:
            rows.append(
                _row(cfg, "abs_level_slope", fit.slope, fit.slope_stderr, R=box_size,
                     field="shot_noise")
            )
    return rows


def _critical_envelope(lam: float) -> float:
    """λ^{-1/2}(log λ)^{3/2}"""
    return lam**-0.5 * max(math.log(lam), 1.0) ** 1.5


def run_threshold_curve(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """p̂(ℓ) of the square crossing on a ladder of levels around cfg.level"""
    rows = []
    for box_size in cfg.box_sizes:
        rect = _square(box_size)
        for name, lam, model in _field_models(cfg):
            thresholds = crossing_thresholds(
                model, rect, Orientation.LR, cfg.replicas, cfg.seed, pool
            )
            scale = math.sqrt(model.variance())
            for w in THRESHOLD_OFFSETS:
                level = cfg.level + w * scale
                est = CrossingEstimate.from_counts(
                    CrossingEvent(rect, Orientation.LR, level),
                    int(np.sum(thresholds <= level)),
                    cfg.replicas,
                )
                rows.append(
                    _row(cfg, "p_hat", est.p_hat, est.stderr, lam=lam, R=box_size,
                         epsilon=model.spacing, field=name, level=level)
                )
    return rows


def run_sprinkle(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """Sprinkled decoupling at h = R^{-(β-2)/2}, with the independent-field baseline at h = 0"""
    rows = []
    for box_size in cfg.box_sizes:
        h = _sprinkling_h(cfg, box_size)
        for lam in cfg.lambdas:
            model = _shot(cfg, lam)
            keys = dict(lam=lam, R=box_size, epsilon=model.spacing, level=cfg.level)
            shared = sprinkling_check(
                model, box_size, cfg.level, h, cfg.replicas, cfg.seed, pool=pool
            )
            rows += _inequality_rows(cfg, shared, h=h, independent=0, **keys)
            baseline = sprinkling_check(
                model, box_size, cfg.level, 0.0, cfg.replicas, cfg.seed, True, pool
            )
            rows += _inequality_rows(cfg, baseline, h=0.0, independent=1, **keys)
    return rows


def run_kesten(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """Kesten inclusion audit and the pairs·max² inequality at ℓ + h"""
    rows = []
    for box_size in cfg.box_sizes:
        h = _sprinkling_h(cfg, box_size)
        for lam in cfg.lambdas:
            model = _shot(cfg, lam)
            report = kesten_check(model, box_size, cfg.level, cfg.replicas, cfg.seed, h, pool)
            keys = dict(lam=lam, R=box_size, epsilon=model.spacing, level=cfg.level, h=h)
            rows += [
                _row(cfg, "violations", report.details["violations"], **keys),
                _row(cfg, "pairs", report.details["pairs"], **keys),
                _row(cfg, "max_pair_product", report.details["max_pair_product"], **keys),
            ]
            rows += _inequality_rows(cfg, report, **keys)
    return rows


def _random_mask(seed: int, i: int) -> np.ndarray:
    gen = RngStream(seed).child(Purpose.MASK, i).generator()
    p = gen.uniform(0.3, 0.8)
    return gen.random((MASK_SIDE, MASK_SIDE)) < p


def run_duality_audit(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """
    LR(primal) XOR TB(dual) on random Bernoulli masks and on excursion sets of
    synthesized fields; masks also compare union-find against labelling
    """

    def mask_check(i: int) -> Tuple[int, int]:
        mask = _random_mask(cfg.seed, i)
        lr = crosses(mask, Orientation.LR)
        tb = crosses(~mask, Orientation.TB, Connectivity.DUAL)
        lr_uf = crosses(mask, Orientation.LR, method="union_find")
        tb_uf = crosses(~mask, Orientation.TB, Connectivity.DUAL, method="union_find")
        return int(lr == tb), int(lr != lr_uf or tb != tb_uf)

    checks = np.asarray(replica_map(mask_check, cfg.replicas, pool))
    rows = [
        _row(cfg, "violations", int(checks[:, 0].sum()), source="mask"),
        _row(cfg, "method_disagreements", int(checks[:, 1].sum()), source="mask"),
    ]
    for box_size in cfg.box_sizes:
        rect = _square(box_size)
        for name, lam, model in _field_models(cfg):

            def field_check(i: int) -> int:
                ex = excursion(model.sample(rect, replica_stream(cfg.seed, i)), cfg.level)
                lr = crossing(ex, rect, Orientation.LR)
                return int(lr == crossing(ex, rect, Orientation.TB, Connectivity.DUAL))

            violations = sum(replica_map(field_check, cfg.replicas, pool))
            rows.append(
                _row(cfg, "violations", violations, lam=lam, R=box_size,
                     epsilon=model.spacing, source=name)
            )
    return rows


def run_epsilon_stability(cfg: ExperimentConfig, pool: ReplicaPool) -> List[Row]:
    """|p̂(ε) - p̂(ε/2)| of the square crossing against 3 stderr"""
    rows = []
    for box_size in cfg.box_sizes:
        for name, lam, model in _field_models(cfg):
            report = epsilon_stability(model, box_size, cfg.level, cfg.replicas, cfg.seed, pool)
            keys = dict(lam=lam, R=box_size, epsilon=model.spacing, field=name, level=cfg.level)
            rows += [
                _row(cfg, "p_coarse", report.details["p_coarse"], **keys),
                _row(cfg, "p_fine", report.details["p_fine"], **keys),
                _row(cfg, "abs_diff", report.lhs, report.stderr, **keys),
                _row(cfg, "bound", report.rhs, **keys),
                _row(cfg, "holds", int(report.lhs <= report.rhs), **keys),
            ]
    return rows


# ============================================================================
# DRIVER
# ============================================================================

RUNNERS: Dict[ExperimentKind, Runner] = {
    ExperimentKind.MARGINAL_CLT: run_marginal_clt,
    ExperimentKind.COUPLING_RATE: run_coupling_rate,
    ExperimentKind.TRUNCATION_RATE: run_truncation_rate,
    ExperimentKind.C1_TAILS: run_c1_tails,
    ExperimentKind.LC_SWEEP: run_lc_sweep,
    ExperimentKind.THRESHOLD_CURVE: run_threshold_curve,
    ExperimentKind.SPRINKLE: run_sprinkle,
    ExperimentKind.KESTEN: run_kesten,
    ExperimentKind.DUALITY_AUDIT: run_duality_audit,
    ExperimentKind.DERIVATIVE_COUPLING: run_derivative_coupling,
    ExperimentKind.POISSON_GAUSSIAN_TAIL: run_poisson_gaussian_tail,
    ExperimentKind.EPSILON_STABILITY: run_epsilon_stability,
    ExperimentKind.COVARIANCE_ORACLE: run_covariance_oracle,
    ExperimentKind.QM_BOUNDS: run_qm_bounds,
}


def collect_rows(cfg: ExperimentConfig, pool: Optional[ReplicaPool] = None) -> List[Row]:
    """Run the configured experiment and return its report rows"""
    runner = RUNNERS[cfg.experiment]
    if pool is not None:
        return runner(cfg, pool)
    with ReplicaPool(_threads(cfg)) as own:
        return runner(cfg, own)


def _threads(cfg: ExperimentConfig) -> int:
    return cfg.threads if cfg.threads is not None else settings.threads


def default_output(cfg: ExperimentConfig) -> Path:
    return Path(f"{cfg.experiment.value}.csv")


def run_experiment(cfg: ExperimentConfig) -> Path:
    """
    Run one experiment and write its CSV report

    Returns:
        path of the report; `<path>.log` holds wall time and thread count
    """
    out = Path(cfg.output) if cfg.output is not None else default_output(cfg)
    threads = _threads(cfg)
    logger.info(
        f"Running {cfg.experiment.value} (seed={cfg.seed}, replicas={cfg.replicas}, "
        f"threads={threads})"
    )
    start = time.perf_counter()
    with ReplicaPool(threads) as pool:
        rows = collect_rows(cfg, pool)
    schema = Schema.for_experiment(cfg.experiment.value)
    emit_csv(rows, schema, out, cfg.echo())
    elapsed = time.perf_counter() - start
    write_run_log(out, elapsed, threads, len(rows))
    logger.info(f"Finished {cfg.experiment.value} in {elapsed:.1f}s -> {out}")
    return out
