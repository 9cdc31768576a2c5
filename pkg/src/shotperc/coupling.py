"""
Poisson-Gaussian coupling

Builds a shot noise field f_λ and a Gaussian field f from shared randomness
so that ‖f_λ - f‖ is small:

1. Per unit cell, the Poisson count N and the Gaussian total mass Z are
   quantile-coupled: N = F_λ^{-1}(Φ(Z)).
2. Inside the cell, a binary expansion (dyadic halving along the axes in
   turn) splits the N points and the Brownian-bridge mass level by level.
   At each node the left count Binomial(n, ½) and the bridge increment are
   driven by the same Gaussian variate, down to the coupling depth m; below
   m both sides continue with independent randomness.
3. Leaf counts feed f_λ, leaf bridge masses plus the Z-carried share of the
   cell total feed f. Both go through the synthesis lattice of
   field_synthesis, so each marginal has exactly the law of the standalone
   synthesizer.

Also here: the L²-moduli ω² and q_m of a test function over the expansion and
the Poincaré constant that bounds them.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError, PreconditionError
from .field_synthesis import (
    FieldLabel,
    GridField,
    GridSpec,
    SynthesisLattice,
    check_pad,
    shot_noise_from_counts,
)
from .kernel import AnyKernel, MultiIndex, check_multi_index, zero_index
from .rng import RngStream

logger = logging.getLogger(__name__)

MAX_DEPTH = 30
MAX_COUPLED_DEPTH = 24

# Sub-stream tags below a unit-cell stream
COUNT_TAG = 0
TREE_TAG = 1

TestFunction = Callable[[np.ndarray], np.ndarray]


# ============================================================================
# BINARY EXPANSION
# ============================================================================


@dataclass(frozen=True)
class BinaryExpansion:
    """
    Dyadic partition tree of the unit cube [0,1)^d

    Level j+1 halves every level-j cell along axis j mod d; cell (j, k) has
    children (j+1, 2k) (lower half) and (j+1, 2k+1). Endpoints are exact
    Fractions.
    """

    dimension: int
    depth: int

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidArgumentError(f"dimension must be >= 1, got {self.dimension}")
        if not 0 <= self.depth <= MAX_DEPTH:
            raise InvalidArgumentError(f"depth must lie in [0, {MAX_DEPTH}], got {self.depth}")

    def split_axis(self, level: int) -> int:
        """Axis halved between level and level + 1"""
        return level % self.dimension

    def halvings(self, j: int) -> Tuple[int, ...]:
        """Number of times each axis has been halved at level j"""
        d = self.dimension
        return tuple((j + d - 1 - a) // d for a in range(d))

    def _check_level(self, j: int) -> None:
        if not 0 <= j <= self.depth:
            raise InvalidArgumentError(f"level {j} outside [0, {self.depth}]")

    def cell(self, j: int, k: int) -> Tuple[Tuple[Fraction, ...], Tuple[Fraction, ...]]:
        """Exact (lower, upper) corners of Δ_{j,k}"""
        self._check_level(j)
        if not 0 <= k < 2**j:
            raise InvalidArgumentError(f"cell index {k} outside [0, 2^{j})")
        lower = [Fraction(0)] * self.dimension
        side = [Fraction(1)] * self.dimension
        for i in range(j):
            bit = (k >> (j - 1 - i)) & 1
            a = self.split_axis(i)
            side[a] /= 2
            lower[a] += bit * side[a]
        return tuple(lower), tuple(lo + s for lo, s in zip(lower, side))

    def cells(self, j: int) -> List[Tuple[Tuple[Fraction, ...], Tuple[Fraction, ...]]]:
        return [self.cell(j, k) for k in range(2**j)]

    def volume(self, j: int) -> Fraction:
        self._check_level(j)
        return Fraction(1, 2**j)

    def sides(self, j: int) -> np.ndarray:
        return np.array([2.0**-h for h in self.halvings(j)])

    def diameter(self, j: int) -> float:
        return float(np.linalg.norm(self.sides(j)))

    def lattice_index(self, j: int) -> np.ndarray:
        """Per-axis position of every level-j cell in its 2^{h_a} grid, shape (2^j, d)"""
        self._check_level(j)
        k = np.arange(2**j, dtype=np.int64)
        idx = np.zeros((2**j, self.dimension), dtype=np.int64)
        for i in range(j):
            bit = (k >> (j - 1 - i)) & 1
            a = self.split_axis(i)
            idx[:, a] = idx[:, a] * 2 + bit
        return idx

    def level_bounds(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Float lower corners (2^j, d) and common side lengths (d,) of level j"""
        sides = self.sides(j)
        return self.lattice_index(j) * sides, sides

    def to_dict(self):
        return {"dimension": self.dimension, "depth": self.depth}


def build_binary_expansion(d: int, m: int) -> BinaryExpansion:
    """
    Binary expansion of [0,1)^d down to level m

    Example:
        >>> build_binary_expansion(1, 2).cells(2)[1]
        ((Fraction(1, 4),), (Fraction(1, 2),))
    """
    return BinaryExpansion(d, m)


# ============================================================================
# L² MODULI
# ============================================================================


def _tensor_nodes(d: int, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0,1]^d, shape (nodes^d, d), and weights"""
    if nodes < 4:
        raise InvalidArgumentError(f"quadrature needs >= 4 nodes per axis, got {nodes}")
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = (t + 1.0) / 2.0
    w = w / 2.0
    grid_t = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    grid_w = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1), axis=-1)
    return grid_t, grid_w.reshape(-1)


def _moduli(h: TestFunction, lower: np.ndarray, sides: np.ndarray, nodes: int) -> np.ndarray:
    """ω² of h on each box lower[i] + [0, sides]"""
    t, w = _tensor_nodes(lower.shape[1], nodes)
    x = lower[:, None, :] + t[None, :, :] * sides
    values = np.asarray(h(x), dtype=float)
    mean = values @ w / w.sum()
    return ((values - mean[:, None]) ** 2) @ w / w.sum()


def l2_modulus(h: TestFunction, cell, nodes: int = 8) -> float:
    """
    ω²(h; D) = Vol(D)^{-1} ∫_D (h - h̄)², by tensor Gauss-Legendre quadrature

    Args:
        h: test function, vectorized over (..., d) arrays of points
        cell: (lower, upper) corners of the rectangle D
        nodes: quadrature nodes per axis (>= 4)
    """
    lower = np.asarray([float(v) for v in cell[0]])
    upper = np.asarray([float(v) for v in cell[1]])
    return float(_moduli(h, lower[None, :], upper - lower, nodes)[0])


def q_profile(h: TestFunction, expansion: BinaryExpansion, nodes: int = 8) -> np.ndarray:
    """q_m(h) for m = 0..expansion.depth"""
    per_level = []
    for j in range(expansion.depth + 1):
        lower, sides = expansion.level_bounds(j)
        per_level.append(float(np.sum(_moduli(h, lower, sides, nodes))))
    return np.sqrt(np.cumsum(per_level))


def q_modulus(h: TestFunction, expansion: BinaryExpansion, m: int, nodes: int = 8) -> float:
    """q_m(h) = (Σ_{j≤m} Σ_k ω²(h; Δ_{j,k}))^{1/2}"""
    if not 0 <= m <= expansion.depth:
        raise InvalidArgumentError(f"m={m} exceeds the expansion depth {expansion.depth}")
    return float(q_profile(h, BinaryExpansion(expansion.dimension, m), nodes)[-1])


def poincare_constant(expansion: BinaryExpansion) -> float:
    """
    max over the rectangle classes of the expansion of a²/(π² diam²)

    a is the longest side: the Neumann-Poincaré constant of a rectangle is
    (a/π)², so ω²(h; Δ) ≤ c diam(Δ)² Vol(Δ)^{-1} ∫_Δ |∇h|².
    """
    best = 0.0
    for j in range(min(expansion.depth, expansion.dimension - 1) + 1):
        sides = expansion.sides(j)
        best = max(best, float(np.max(sides) ** 2 / (math.pi**2 * np.sum(sides**2))))
    return best


def gradient_l2(h: TestFunction, d: int, resolution: int = 256) -> float:
    """‖∇h‖_{L²([0,1]^d)} by central differences on a midpoint grid"""
    axis = (np.arange(resolution) + 0.5) / resolution
    x = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
    values = np.asarray(h(x), dtype=float)
    grads = np.gradient(values, 1.0 / resolution)
    if d == 1:
        grads = [grads]
    return float(np.sqrt(np.mean(sum(g * g for g in grads))))


# ============================================================================
# QUANTILE COUPLINGS
# ============================================================================


def _discrete_quantile(dist, z: np.ndarray) -> np.ndarray:
    """Smallest n with CDF(n) >= Φ(z); the upper tail is resolved with survival functions"""
    n = np.maximum(dist.ppf(stats.norm.cdf(z)), 0.0)
    upper = z > 0
    if np.any(upper):
        q = stats.norm.sf(z)
        n = np.where(upper & (n > 0) & (dist.sf(n - 1) <= q), n - 1, n)
        n = np.where(upper & (dist.sf(n) > q), n + 1, n)
    return n.astype(np.int64)


def poisson_quantile(lam: float, z) -> np.ndarray:
    """N = F_λ^{-1}(Φ(z)), vectorized over z"""
    z = np.asarray(z, dtype=float)
    return _discrete_quantile(stats.poisson(lam), z)


def binomial_quantile(n, z) -> np.ndarray:
    """Binomial(n, ½) quantile of Φ(z), elementwise; 0 where n = 0"""
    n = np.asarray(n, dtype=np.int64)
    z = np.asarray(z, dtype=float)
    safe = np.maximum(n, 1)
    out = _discrete_quantile(stats.binom(safe, 0.5), z)
    return np.where(n == 0, 0, np.minimum(out, n))


def _binomial_from_uniform(n: np.ndarray, u: np.ndarray) -> np.ndarray:
    safe = np.maximum(n, 1)
    out = np.maximum(stats.binom.ppf(u, safe, 0.5), 0.0).astype(np.int64)
    return np.where(n == 0, 0, np.minimum(out, n))


def couple_poisson_gaussian(lam: float, rng_stream: RngStream) -> Tuple[int, float]:
    """
    (N, Z) with Z ~ N(0,1) and N = smallest n with PoisCDF_λ(n) ≥ Φ(Z)

    Example:
        >>> n, z = couple_poisson_gaussian(20.0, RngStream(3))
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise InvalidArgumentError(f"intensity must be positive and finite, got {lam}")
    z = float(rng_stream.generator().standard_normal())
    return int(poisson_quantile(lam, z)), z


def default_depth(lam: float, lattice_depth: int) -> int:
    """min(⌈log₂(2λ/t)⌉⁺ with t = log λ, 24, lattice depth)"""
    t = max(math.log(lam), 1.0) if lam > 1 else 1.0
    m = max(0, math.ceil(math.log2(2.0 * lam / t)))
    return min(m, MAX_COUPLED_DEPTH, lattice_depth)


# ============================================================================
# CELL COUPLING
# ============================================================================


@dataclass
class CellRandomness:
    """Everything drawn for one unit cell; the coupled fields derive from these"""

    cell: Tuple[int, ...]
    count: int
    gaussian: float
    node_normals: np.ndarray
    node_left_counts: np.ndarray
    leaf_counts: np.ndarray
    leaf_masses: np.ndarray

    def to_dict(self):
        return {
            "cell": list(self.cell),
            "count": self.count,
            "gaussian": self.gaussian,
            "leaves": int(self.leaf_counts.size),
        }


def _split_tree(
    counts: np.ndarray,
    normals: np.ndarray,
    uniforms: np.ndarray,
    depth: int,
    coupled: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Split counts and bridge masses of many cells down the expansion

    Node (j, k) uses column 2^j - 1 + k of normals/uniforms. Above the
    coupled depth the left count is the Binomial(n, ½) quantile of the node
    normal; below it the left count comes from the node uniform.

    Returns:
        leaf counts (C, 2^depth), leaf bridge masses (C, 2^depth),
        left counts per node (C, 2^depth - 1)
    """
    cells = counts.shape[0]
    n = counts.reshape(cells, 1).astype(np.int64)
    mass = np.zeros((cells, 1))
    left_record = np.zeros((cells, max(2**depth - 1, 0)), dtype=np.int64)
    for j in range(depth):
        width = 2**j
        cols = slice(width - 1, 2 * width - 1)
        xi = normals[:, cols]
        if j < coupled:
            left = binomial_quantile(n, xi)
        else:
            left = _binomial_from_uniform(n, uniforms[:, cols])
        left_record[:, cols] = left
        step = xi * math.sqrt(2.0**-j) / 2.0
        n = np.stack([left, n - left], axis=-1).reshape(cells, 2 * width)
        mass = np.stack([mass / 2 + step, mass / 2 - step], axis=-1).reshape(cells, 2 * width)
    return n, mass, left_record


def _draw_tree(gen: np.random.Generator, depth: int) -> Tuple[np.ndarray, np.ndarray]:
    size = 2**depth
    return gen.standard_normal(size), gen.random(size)


def couple_cell(
    count: int,
    expansion: BinaryExpansion,
    m: int,
    rng_stream: RngStream,
    cell: Sequence[int] = (),
    gaussian: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray, CellRandomness]:
    """
    Dyadic coupling of count uniform points and a Brownian-bridge mass on [0,1)^d

    Args:
        count: number of points N >= 0
        expansion: binary expansion; its depth is the leaf level
        m: coupled depth, m <= expansion.depth
        rng_stream: stream of this cell's tree randomness
        cell, gaussian: recorded as is

    Returns:
        (points (N, d), leaf bridge masses (2^depth,), record)
    """
    if count < 0:
        raise InvalidArgumentError(f"count must be >= 0, got {count}")
    if not 0 <= m <= expansion.depth:
        raise InvalidArgumentError(f"m={m} exceeds the expansion depth {expansion.depth}")
    gen = rng_stream.generator()
    normals, uniforms = _draw_tree(gen, expansion.depth)
    leaves, masses, left = _split_tree(
        np.array([count]), normals[None, :], uniforms[None, :], expansion.depth, m
    )
    leaves, masses = leaves[0], masses[0]
    lower, sides = expansion.level_bounds(expansion.depth)
    points = np.repeat(lower, leaves, axis=0) + gen.random((count, expansion.dimension)) * sides
    record = CellRandomness(
        tuple(int(c) for c in cell), int(count), float(gaussian), normals, left[0], leaves, masses
    )
    return points, masses, record


# ============================================================================
# COUPLED FIELDS
# ============================================================================


@dataclass
class CoupledFieldPair:
    """(∂^α f_λ, ∂^α f) built from one cell randomness record"""

    shot: GridField
    gauss: GridField
    lam: float
    depth: int
    cells: List[CellRandomness] = field(default_factory=list)

    @property
    def alpha(self) -> MultiIndex:
        return self.shot.alpha

    def to_dict(self):
        return {
            "lambda": self.lam,
            "depth": self.depth,
            "alpha": list(self.alpha),
            "grid": self.shot.grid.to_dict(),
            "cells": len(self.cells),
        }


def _lattice_depth(grid: GridSpec) -> int:
    n = grid.cells_per_unit
    p = n.bit_length() - 1
    if 2**p != n:
        raise PreconditionError(f"coupling needs epsilon = 2^-p, got 1/{n}")
    return p * grid.dimension


def _coupled_masses(
    lattice: SynthesisLattice,
    lam: float,
    m: int,
    rng_stream: RngStream,
    keep_cells: bool,
) -> Tuple[np.ndarray, np.ndarray, List[CellRandomness]]:
    """Lattice counts and white-noise masses of the padded box, coupled per unit cell"""
    grid = lattice.grid
    depth = _lattice_depth(grid)
    expansion = BinaryExpansion(grid.dimension, depth)
    cells = list(lattice.unit_cells())
    size = 2**depth
    z = np.empty(len(cells))
    normals = np.empty((len(cells), size))
    uniforms = np.empty((len(cells), size))
    for i, cell in enumerate(cells):
        cell_stream = rng_stream.child(*cell)
        z[i] = cell_stream.child(COUNT_TAG).generator().standard_normal()
        normals[i], uniforms[i] = _draw_tree(cell_stream.child(TREE_TAG).generator(), depth)

    totals = poisson_quantile(lam, z)
    leaves, bridge, left = _split_tree(totals, normals, uniforms, depth, m)
    white = bridge + z[:, None] * 2.0**-depth

    offsets = (np.asarray(cells, dtype=np.int64) - lattice.cell_lo) * grid.cells_per_unit
    sites = offsets[:, None, :] + expansion.lattice_index(depth)[None, :, :]
    index = tuple(sites[..., a] for a in range(grid.dimension))
    counts = np.zeros(lattice.mass_shape)
    masses = np.zeros(lattice.mass_shape)
    counts[index] = leaves
    masses[index] = white

    records: List[CellRandomness] = []
    if keep_cells:
        records = [
            CellRandomness(
                cell, int(totals[i]), float(z[i]), normals[i], left[i], leaves[i], bridge[i]
            )
            for i, cell in enumerate(cells)
        ]
    return counts, masses, records


def couple_derivatives(
    k: AnyKernel,
    lam: float,
    grid: GridSpec,
    rng_stream: RngStream,
    alphas: Sequence[Sequence[int]],
    m: Optional[int] = None,
    pad_radius: Optional[float] = None,
    keep_cells: bool = False,
) -> Dict[MultiIndex, CoupledFieldPair]:
    """
    Coupled pairs (∂^α f_λ, ∂^α f) for every α in alphas, all from the same
    cell randomness
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise InvalidArgumentError(f"intensity must be positive and finite, got {lam}")
    alphas = [check_multi_index(a, k) for a in alphas]
    depth = _lattice_depth(grid)
    m = default_depth(lam, depth) if m is None else m
    if not 0 <= m <= depth:
        raise InvalidArgumentError(f"m={m} must lie in [0, {depth}] for epsilon {grid.epsilon}")
    pad = check_pad(k, pad_radius)
    lattice = SynthesisLattice(grid, pad)
    counts, masses, records = _coupled_masses(lattice, lam, m, rng_stream, keep_cells)
    logger.debug(f"coupled λ={lam:g} m={m} over {lattice.stencil_shape} stencil")

    pairs = {}
    for alpha in alphas:
        shot = shot_noise_from_counts(lattice, counts, k, alpha, lam)
        gauss = lattice.convolve(masses, lattice.stencil(k, alpha))
        pairs[alpha] = CoupledFieldPair(
            GridField(grid, shot, FieldLabel.for_kernel(k, lam), alpha),
            GridField(grid, gauss, FieldLabel.for_kernel(k), alpha),
            float(lam),
            m,
            records,
        )
    return pairs


def couple_fields(
    k: AnyKernel,
    lam: float,
    grid: GridSpec,
    m: Optional[int],
    pad_radius: Optional[float],
    rng_stream: RngStream,
    alpha: Optional[Sequence[int]] = None,
    keep_cells: bool = True,
) -> CoupledFieldPair:
    """
    Coupled (f_λ, f) on the grid

    Args:
        k: kernel (truncated kernels allowed)
        lam: intensity
        grid: lattice with epsilon = 2^-p
        m: coupled depth (None: default_depth)
        pad_radius: padding (None: from the tail tolerance)
        rng_stream: replica stream; unit cells use its children
        alpha: derivative multi-index (default 0)
        keep_cells: keep the per-cell randomness record

    Example:
        >>> pair = couple_fields(Kernel.rational(3.0), 64.0, grid, None, None, RngStream(1))
        >>> err = sup_norm_diff(pair.shot, pair.gauss, grid.region)
    """
    alpha = zero_index(k.dimension) if alpha is None else tuple(alpha)
    pairs = couple_derivatives(k, lam, grid, rng_stream, [alpha], m, pad_radius, keep_cells)
    return pairs[check_multi_index(alpha, k)]
