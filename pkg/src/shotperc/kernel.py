"""
Kernels

Isotropic kernels g(x) = G(1 + |x|²) with analytic derivatives up to order 2,
the smooth cut-off χ and truncated kernels g^r(x) = g(x) χ(x/r), and the
integral functionals built on them: ∫g, ∫g², the covariance
K(x) = ∫ g(-y) g(x-y) dy, the decay constant C_g and padding radii.

Built-in families (both with g(0) = 1):
    rational       g(x) = (1 + |x|²)^(-β/2),        β > d
    stretched_exp  g(x) = exp(1 - (1 + |x|²)^(γ/2)), γ ∈ (0, 1)
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize, signal

from .errors import InvalidArgumentError, NumericalConsistencyError, PreconditionError

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]


class KernelFamily(str, Enum):
    RATIONAL = "rational"
    STRETCHED_EXP = "stretched_exp"


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}"""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _smoothstep(u):
    """Quintic smoothstep 6u⁵ - 15u⁴ + 10u³ and its first two derivatives"""
    u = np.clip(u, 0.0, 1.0)
    s = u * u * u * (u * (6.0 * u - 15.0) + 10.0)
    s1 = 30.0 * u * u * (u - 1.0) ** 2
    s2 = 60.0 * u * (u - 1.0) * (2.0 * u - 1.0)
    return s, s1, s2


@dataclass(frozen=True)
class CutoffFunction:
    """
    Radial cut-off χ(x) = ψ(|x|)

    ψ = 1 on [0, inner], 0 on [outer, ∞), and a quintic smoothstep bridge in
    between, so χ is C² with values in [0, 1].
    """

    inner_radius: float = 0.25
    outer_radius: float = 0.5

    def profile(self, t):
        """ψ(t), ψ'(t), ψ''(t) for radii t ≥ 0"""
        t = np.asarray(t, dtype=float)
        width = self.outer_radius - self.inner_radius
        s, s1, s2 = _smoothstep((t - self.inner_radius) / width)
        return 1.0 - s, -s1 / width, -s2 / width**2

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.profile(np.linalg.norm(x, axis=-1))[0]

    def to_dict(self):
        return {"inner_radius": self.inner_radius, "outer_radius": self.outer_radius}


@dataclass(frozen=True)
class Kernel:
    """
    Analytic isotropic kernel

    Use the constructors:
        >>> g = Kernel.rational(beta=3.0, dimension=2)
        >>> h = Kernel.stretched_exp(gamma=0.5)
    """

    family: KernelFamily
    parameter: float
    dimension: int = 2
    derivative_order_max: int = 2

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidArgumentError(f"dimension must be >= 1, got {self.dimension}")
        if self.derivative_order_max < 2:
            raise InvalidArgumentError("derivative_order_max must be >= 2")
        p = self.parameter
        if p is None or not math.isfinite(p):
            raise InvalidArgumentError(f"{self.family.value} kernel needs a finite parameter")
        if self.family == KernelFamily.RATIONAL and p <= self.dimension:
            raise InvalidArgumentError(
                f"rational kernel needs beta > d for integrability (beta={p}, d={self.dimension})"
            )
        if self.family == KernelFamily.STRETCHED_EXP and not 0.0 < p < 1.0:
            raise InvalidArgumentError(f"stretched_exp kernel needs gamma in (0,1), got {p}")

    @classmethod
    def rational(cls, beta: float, dimension: int = 2) -> "Kernel":
        return cls(KernelFamily.RATIONAL, float(beta) if beta is not None else None, dimension)

    @classmethod
    def stretched_exp(cls, gamma: float, dimension: int = 2) -> "Kernel":
        value = float(gamma) if gamma is not None else None
        return cls(KernelFamily.STRETCHED_EXP, value, dimension)

    @property
    def beta(self) -> float:
        """Polynomial decay exponent (effective exponent d + 4 for stretched_exp)"""
        if self.family == KernelFamily.RATIONAL:
            return self.parameter
        return self.dimension + 4.0

    def radial(self, s):
        """G(s), G'(s), G''(s) at s = 1 + |x|²"""
        s = np.asarray(s, dtype=float)
        if self.family == KernelFamily.RATIONAL:
            b = self.parameter / 2.0
            g0 = s ** (-b)
            return g0, -b * g0 / s, b * (b + 1.0) * g0 / (s * s)
        c = self.parameter / 2.0
        sc = s**c
        g0 = np.exp(1.0 - sc)
        p1 = -c * sc / s
        p2 = -c * (c - 1.0) * sc / (s * s)
        return g0, g0 * p1, g0 * (p1 * p1 + p2)

    def to_dict(self):
        key = "beta" if self.family == KernelFamily.RATIONAL else "gamma"
        return {"family": self.family.value, key: self.parameter, "dimension": self.dimension}


@dataclass(frozen=True)
class TruncatedKernel:
    """g^r(x) = g(x) χ(x/r); vanishes outside B(r/2), equals g on B(r/4)"""

    base: Kernel
    range: float
    cutoff: CutoffFunction = field(default_factory=CutoffFunction)

    def __post_init__(self):
        if not self.range > 0:
            raise InvalidArgumentError(f"truncation range must be positive, got {self.range}")

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def derivative_order_max(self) -> int:
        return self.base.derivative_order_max

    @property
    def beta(self) -> float:
        return self.base.beta

    @property
    def support_radius(self) -> float:
        return self.cutoff.outer_radius * self.range

    def to_dict(self):
        return {"base": self.base.to_dict(), "range": self.range, "cutoff": self.cutoff.to_dict()}


AnyKernel = Union[Kernel, TruncatedKernel]


# ============================================================================
# EVALUATION
# ============================================================================


def _base_jet(k: Kernel, x: np.ndarray):
    """Value, gradient and Hessian of g at points x (shape (..., d))"""
    r2 = np.sum(x * x, axis=-1)
    g0, g1, g2 = k.radial(1.0 + r2)
    grad = 2.0 * x * g1[..., None]
    eye = np.eye(x.shape[-1])
    hess = 4.0 * x[..., :, None] * x[..., None, :] * g2[..., None, None]
    hess = hess + 2.0 * eye * g1[..., None, None]
    return g0, grad, hess


def _cutoff_jet(c: CutoffFunction, r: float, x: np.ndarray):
    """Value, gradient and Hessian of x ↦ χ(x/r)"""
    norm = np.linalg.norm(x, axis=-1)
    p0, p1, p2 = c.profile(norm / r)
    safe = np.where(norm > 0, norm, 1.0)
    u = x / safe[..., None]
    # ψ' and ψ'' vanish on [0, inner], so u is never needed at the origin
    grad = (p1 / r)[..., None] * u
    uu = u[..., :, None] * u[..., None, :]
    eye = np.eye(x.shape[-1])
    hess = (p2 / r**2)[..., None, None] * uu
    hess = hess + (p1 / (r * safe))[..., None, None] * (eye - uu)
    return p0, grad, hess


def kernel_jet(k: AnyKernel, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, gradient (..., d) and Hessian (..., d, d) of the kernel at x"""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != k.dimension:
        raise InvalidArgumentError(f"points must have last axis {k.dimension}, got {x.shape}")
    if isinstance(k, Kernel):
        return _base_jet(k, x)
    v, gv, hv = _base_jet(k.base, x)
    c, gc, hc = _cutoff_jet(k.cutoff, k.range, x)
    value = v * c
    grad = v[..., None] * gc + c[..., None] * gv
    hess = v[..., None, None] * hc + c[..., None, None] * hv
    hess = hess + gv[..., :, None] * gc[..., None, :] + gc[..., :, None] * gv[..., None, :]
    return value, grad, hess


def check_multi_index(alpha: Sequence[int], k: AnyKernel) -> MultiIndex:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != k.dimension or any(a < 0 for a in alpha):
        raise InvalidArgumentError(f"multi-index {alpha} invalid for dimension {k.dimension}")
    if sum(alpha) > min(2, k.derivative_order_max):
        raise InvalidArgumentError(
            f"derivative order {sum(alpha)} unsupported (max {min(2, k.derivative_order_max)})"
        )
    return alpha


def zero_index(d: int) -> MultiIndex:
    return (0,) * d


def _axes(alpha: MultiIndex) -> Tuple[int, ...]:
    axes = []
    for axis, count in enumerate(alpha):
        axes.extend([axis] * count)
    return tuple(axes)


def eval_kernel(k: AnyKernel, alpha: Sequence[int], x) -> np.ndarray:
    """
    ∂^α g(x), vectorized over the leading axes of x

    Args:
        k: Kernel or TruncatedKernel
        alpha: multi-index with |α| ≤ 2
        x: points, shape (..., d)

    Returns:
        array of shape x.shape[:-1]

    Example:
        >>> eval_kernel(Kernel.rational(3.0), (0, 0), [1.0, 0.0])  # 2**-1.5
    """
    alpha = check_multi_index(alpha, k)
    value, grad, hess = kernel_jet(k, x)
    axes = _axes(alpha)
    if not axes:
        return value
    if len(axes) == 1:
        return grad[..., axes[0]]
    return hess[..., axes[0], axes[1]]


# ============================================================================
# RADIAL INTEGRALS
# ============================================================================


def _radial_value(k: AnyKernel, rho):
    rho = np.asarray(rho, dtype=float)
    if isinstance(k, Kernel):
        return k.radial(1.0 + rho * rho)[0]
    return k.base.radial(1.0 + rho * rho)[0] * k.cutoff.profile(rho / k.range)[0]


def _radial_slope(k: AnyKernel, rho):
    """d/dρ of the radial profile"""
    rho = np.asarray(rho, dtype=float)
    base = k if isinstance(k, Kernel) else k.base
    g0, g1, _ = base.radial(1.0 + rho * rho)
    slope = 2.0 * rho * g1
    if isinstance(k, Kernel):
        return slope
    p0, p1, _ = k.cutoff.profile(rho / k.range)
    return slope * p0 + g0 * p1 / k.range


def _breakpoints(k: AnyKernel):
    if isinstance(k, TruncatedKernel):
        r = k.range
        return [0.0, k.cutoff.inner_radius * r, k.support_radius]
    return [0.0, 1.0, 10.0, 100.0, 1000.0, math.inf]


def radial_integral(
    k: AnyKernel, fn, start: float = 0.0, stop: float = math.inf
) -> Tuple[float, float]:
    """
    |S^{d-1}| ∫_start^stop fn(ρ) ρ^{d-1} dρ, split at the kernel's breakpoints

    Returns:
        (value, absolute error estimate)
    """
    d = k.dimension
    if isinstance(k, TruncatedKernel):
        stop = min(stop, k.support_radius)
    if stop <= start:
        return 0.0, 0.0
    pts = [start] + [p for p in _breakpoints(k) if start < p < stop] + [stop]
    total, err = 0.0, 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, e = integrate.quad(
            lambda t: float(fn(t)) * t ** (d - 1), a, b, epsabs=1e-14, epsrel=1e-12, limit=400
        )
        total += val
        err += e
    area = sphere_area(d)
    return area * total, area * err


@lru_cache(maxsize=64)
def kernel_integral(k: AnyKernel) -> Tuple[float, float]:
    """
    (∫g, ∫g²) over ℝ^d by adaptive radial quadrature

    Example:
        >>> kernel_integral(Kernel.rational(3.0, 2))  # (2π, π/2)
    """
    int_g, err_g = radial_integral(k, lambda t: _radial_value(k, t))
    int_g2, err_g2 = radial_integral(k, lambda t: _radial_value(k, t) ** 2)
    if err_g > 1e-8 * abs(int_g) or err_g2 > 1e-8 * abs(int_g2):
        raise NumericalConsistencyError(
            f"kernel integrals did not converge (errors {err_g:.2e}, {err_g2:.2e})"
        )
    return int_g, int_g2


def ball_integral(k: AnyKernel, alpha: Sequence[int], radius: float) -> float:
    """
    ∫_{B(radius)} ∂^α g

    Odd and mixed derivatives integrate to zero by symmetry; ∂_ii g integrates
    to the boundary flux |S^{d-1}| ρ^{d-1} g'(ρ) / d.
    """
    alpha = check_multi_index(alpha, k)
    if radius <= 0:
        return 0.0
    order = sum(alpha)
    if order == 0:
        return radial_integral(k, lambda t: _radial_value(k, t), stop=radius)[0]
    if order == 1 or max(alpha) == 1:
        return 0.0
    d = k.dimension
    return sphere_area(d) * radius ** (d - 1) * float(_radial_slope(k, radius)) / d


def variance(k: AnyKernel) -> float:
    """K(0) = ∫g²"""
    return kernel_integral(k)[1]


def ball_energy(k: AnyKernel, radius: float) -> float:
    """∫_{B(radius)} g², the variance of the field windowed to B(radius)"""
    if radius <= 0:
        return 0.0
    return radial_integral(k, lambda t: _radial_value(k, t) ** 2, stop=radius)[0]


def closed_form_variance(k: AnyKernel) -> Optional[float]:
    """
    K(0) = π^{d/2} Γ(β - d/2) / Γ(β) for the rational kernel; None otherwise

    Example:
        >>> closed_form_variance(Kernel.rational(3.0, 2))  # π/2
    """
    if not isinstance(k, Kernel) or k.family != KernelFamily.RATIONAL:
        return None
    d, beta = k.dimension, k.parameter
    return math.pi ** (d / 2.0) * math.gamma(beta - d / 2.0) / math.gamma(beta)


@lru_cache(maxsize=64)
def gradient_energy(k: AnyKernel) -> float:
    """|K''(0)| = ∫(∂₁g)² = (1/d)∫|∇g|²"""
    val, _ = radial_integral(k, lambda t: _radial_slope(k, t) ** 2)
    return val / k.dimension


def correlation_length(k: AnyKernel) -> float:
    """√(K(0) / |K''(0)|)"""
    return math.sqrt(variance(k) / gradient_energy(k))


def multi_indices(d: int, max_order: int = 2):
    """All multi-indices of dimension d and order ≤ max_order"""
    out = [zero_index(d)]
    for i in range(d):
        out.append(tuple(1 if a == i else 0 for a in range(d)))
    if max_order >= 2:
        for i in range(d):
            for j in range(i, d):
                a = [0] * d
                a[i] += 1
                a[j] += 1
                out.append(tuple(a))
    return out


@lru_cache(maxsize=32)
def decay_constant(k: AnyKernel, n_samples: int = 10_000, seed: int = 0) -> float:
    """
    C_g = max over |α| ≤ 2 and a point sample of |∂^α g(x)| (1 + |x|)^β

    The sample mixes the origin, radii log-uniform on [1e-2, 1e3] and
    uniform random directions.
    """
    rng = np.random.default_rng(seed)
    d = k.dimension
    radii = 10.0 ** rng.uniform(-2.0, 3.0, size=n_samples)
    radii[0] = 0.0
    dirs = rng.standard_normal((n_samples, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x = dirs * radii[:, None]
    value, grad, hess = kernel_jet(k, x)
    weight = (1.0 + radii) ** k.beta
    worst = max(
        np.max(np.abs(value) * weight),
        np.max(np.abs(grad) * weight[:, None]),
        np.max(np.abs(hess) * weight[:, None, None]),
    )
    return float(worst)


def tail_l2(k: AnyKernel, radius: float) -> float:
    """
    √(∫_{|y|>R} C_g² (1+|y|)^{-2β} dy), the L² size of any derivative of
    order ≤ 2 beyond radius R (zero beyond the support of a truncated kernel)
    """
    if isinstance(k, TruncatedKernel) and radius >= k.support_radius:
        return 0.0
    cg = decay_constant(k)
    beta = k.beta
    d = k.dimension
    val, _ = integrate.quad(lambda t: (1.0 + t) ** (-2.0 * beta) * t ** (d - 1), radius, math.inf)
    return cg * math.sqrt(sphere_area(d) * val)


@lru_cache(maxsize=64)
def default_pad_radius(k: AnyKernel, tail_tol: float = 1e-2) -> float:
    """
    Smallest radius whose L² tail is below tail_tol·√K(0)

    Truncated kernels need exactly their support radius r/2.
    """
    if isinstance(k, TruncatedKernel):
        return k.support_radius
    target = tail_tol * math.sqrt(variance(k))
    if tail_l2(k, 0.0) <= target:
        return 0.0
    hi = 1.0
    while tail_l2(k, hi) > target:
        hi *= 2.0
        if hi > 1e7:
            raise PreconditionError(f"no padding radius reaches tail tolerance {tail_tol}")
    radius = optimize.brentq(lambda t: tail_l2(k, t) - target, 0.0, hi, xtol=1e-6)
    logger.debug(f"default pad radius {radius:.3f} for {k.to_dict()} (tol {tail_tol})")
    return float(radius)


# ============================================================================
# COVARIANCE
# ============================================================================


@dataclass(frozen=True)
class CovarianceGrid:
    """Lattice used by the FFT autocorrelation path: spacing h on [-L, L]^d"""

    spacing: float = 0.125
    half_width: float = 64.0
    angular_nodes: int = 256
    tolerance: float = 1e-5

    def __post_init__(self):
        if self.spacing <= 0 or self.half_width <= 0:
            raise InvalidArgumentError("covariance grid needs positive spacing and half width")


def covariance_quadrature(
    k: AnyKernel, x, grid: CovarianceGrid = CovarianceGrid()
) -> Tuple[float, float]:
    """
    K(x) = ∫ g(u - x/2) g(u + x/2) du by quadrature

    d = 1: adaptive quad on the line. d = 2: polar coordinates about the
    midpoint, periodic trapezoid in angle (spectrally accurate for smooth
    integrands) and adaptive quad in radius.

    Returns:
        (value, error estimate)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = k.dimension
    if x.shape != (d,):
        raise InvalidArgumentError(f"lag must have shape ({d},), got {x.shape}")
    half = x / 2.0
    if d == 1:
        def line(u):
            return float(
                _radial_value(k, abs(u - half[0])) * _radial_value(k, abs(u + half[0]))
            )
        pts = sorted({-abs(half[0]), 0.0, abs(half[0])})
        edges = [-math.inf] + pts + [math.inf]
        total, err = 0.0, 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(line, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)
            total += val
            err += e
        return total, err
    if d != 2:
        raise InvalidArgumentError("covariance quadrature is implemented for d in {1, 2}")
    n_theta = grid.angular_nodes
    theta = np.arange(n_theta) * (math.pi / n_theta)
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)

    def ring(rho):
        u = rho * circle
        a = _radial_value(k, np.linalg.norm(u - half, axis=1))
        b = _radial_value(k, np.linalg.norm(u + half, axis=1))
        # u and -u give the same product, so half the circle suffices
        return 2.0 * math.pi * np.mean(a * b) * rho

    lag = float(np.linalg.norm(x))
    pts = sorted({0.0, lag / 2.0, lag / 2.0 + 2.0, lag + 10.0, lag + 60.0})
    edges = pts + [math.inf]
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if isinstance(k, TruncatedKernel):
            b = min(b, k.support_radius + lag / 2.0)
            if a >= b:
                continue
        val, e = integrate.quad(ring, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)
        total += val
        err += e
    return total, err


@lru_cache(maxsize=4)
def _lattice_autocorrelation(k: AnyKernel, grid: CovarianceGrid) -> Tuple[np.ndarray, int]:
    """h^d Σ_y g(y) g(y + jh) for all lattice lags j, via FFT"""
    d = k.dimension
    n = int(round(grid.half_width / grid.spacing))
    axis = np.arange(-n, n + 1) * grid.spacing
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
    samples = _radial_value(k, np.linalg.norm(mesh, axis=-1))
    flipped = samples[(slice(None, None, -1),) * d]
    auto = signal.fftconvolve(samples, flipped, mode="full") * grid.spacing**d
    return auto, 2 * n


def covariance_fft(k: AnyKernel, x, grid: CovarianceGrid = CovarianceGrid()) -> Tuple[float, float]:
    """
    Discrete autocorrelation of sampled g at lag x

    Lattice lags are read from the FFT autocorrelation; off-lattice lags use
    the same lattice sum evaluated directly.

    Returns:
        (value, error estimate from the truncated lattice box)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = k.dimension
    lag = float(np.linalg.norm(x))
    if lag >= grid.half_width / 2:
        raise PreconditionError(
            f"lag {lag:.3g} too large for covariance grid half width {grid.half_width}"
        )
    steps = x / grid.spacing
    tail = tail_l2(k, grid.half_width - lag) ** 2
    if np.allclose(steps, np.round(steps), atol=1e-9):
        auto, centre = _lattice_autocorrelation(k, grid)
        idx = tuple(int(round(s)) + centre for s in steps)
        return float(auto[idx]), 2.0 * tail
    n = int(round(grid.half_width / grid.spacing))
    axis = np.arange(-n, n + 1) * grid.spacing
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
    a = _radial_value(k, np.linalg.norm(mesh, axis=-1))
    b = _radial_value(k, np.linalg.norm(mesh + x, axis=-1))
    return float(np.sum(a * b) * grid.spacing**d), 2.0 * tail


def covariance(k: AnyKernel, x, grid: CovarianceGrid = CovarianceGrid()) -> float:
    """
    K(x) = ∫ g(-y) g(x-y) dy, checked two ways

    The quadrature value is returned after it has been compared with the
    FFT autocorrelation of the sampled kernel.

    Raises:
        PreconditionError: quadrature error estimate above 1e-6
        NumericalConsistencyError: the two paths disagree beyond tolerance
    """
    quad_val, quad_err = covariance_quadrature(k, x, grid)
    if quad_err > 1e-6:
        raise PreconditionError(f"covariance quadrature error {quad_err:.2e} exceeds 1e-6")
    fft_val, fft_err = covariance_fft(k, x, grid)
    tol = max(grid.tolerance, 2.0 * (quad_err + fft_err))
    if abs(quad_val - fft_val) > tol:
        raise NumericalConsistencyError(
            f"covariance at {np.atleast_1d(x).tolist()}: quadrature {quad_val:.10g} vs "
            f"FFT {fft_val:.10g} (tolerance {tol:.2e})"
        )
    return quad_val


# ============================================================================
# RATE TARGETS
# ============================================================================


def sigma_d(lam: float, d: int) -> float:
    """Coupling scale σ_d(λ): λ^{-1/2}, λ^{-1/2}√log λ, λ^{-1/d} for d = 1, 2, ≥ 3"""
    if lam < 1:
        raise InvalidArgumentError(f"sigma_d needs lambda >= 1, got {lam}")
    if d == 1:
        return lam**-0.5
    if d == 2:
        return lam**-0.5 * math.sqrt(math.log(lam))
    return lam ** (-1.0 / d)


def coupling_exponent(d: int, beta: float) -> float:
    """c_{d,β} = 1 + d/2 + d/(β - d)"""
    if beta <= d:
        raise InvalidArgumentError("coupling exponent needs beta > d")
    return 1.0 + d / 2.0 + d / (beta - d)
