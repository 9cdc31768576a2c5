"""
Field synthesis

Renders the normalised shot noise field f_λ = g ⋆ P̃_λ, the Gaussian field
f = g ⋆ W̃, their truncated versions and derivative fields ∂^α f on regular
lattices.

How a field is built:
1. The region is padded by pad_radius and rounded out to whole unit cells.
   Randomness is drawn per unit cell from a cell-keyed stream, so any two
   syntheses over overlapping boxes see the same noise on the overlap.
2. Noise is binned to lattice cells of side ε (Poisson counts, or white noise
   masses of variance ε^d).
3. The masses are convolved with a stencil of ∂^α g sampled at the
   site-to-cell-centre offsets, windowed to the ball of radius pad_radius.

Field dump format: `<name>` holds little-endian float64 values, row-major,
and `<name>.json` holds the header (region, epsilon, shape, label, alpha,
seed).
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .config import settings
from .errors import (
    GeometryError,
    InvalidArgumentError,
    NumericalConsistencyError,
    PreconditionError,
    ReportError,
)
from .kernel import (
    AnyKernel,
    MultiIndex,
    TruncatedKernel,
    ball_integral,
    check_multi_index,
    correlation_length,
    default_pad_radius,
    eval_kernel,
    zero_index,
)
from .point_process import BoxRegion, sample_poisson
from .rng import RngStream

logger = logging.getLogger(__name__)

# Sub-stream tags below a field stream
POINTS_TAG = 0
WHITE_NOISE_TAG = 1

_SNAP = 1e-9


# ============================================================================
# GRID GEOMETRY
# ============================================================================


@dataclass(frozen=True)
class GridSpec:
    """
    Lattice of sites lower + aε over a box, with 1/ε a positive integer

    Example:
        >>> grid = GridSpec(BoxRegion((0, 0), (4, 4)), 1 / 16)
        >>> grid.shape
        (65, 65)
    """

    region: BoxRegion
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")
        n = round(1.0 / self.epsilon)
        if n < 1 or abs(1.0 / self.epsilon - n) > _SNAP * n:
            raise InvalidArgumentError(f"1/epsilon must be a positive integer, got {self.epsilon}")
        object.__setattr__(self, "epsilon", 1.0 / n)

    @property
    def cells_per_unit(self) -> int:
        return round(1.0 / self.epsilon)

    @property
    def dimension(self) -> int:
        return self.region.dimension

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(
            int(math.ceil(side / self.epsilon - _SNAP)) + 1 for side in self.region.sides
        )

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.region.lower[axis] + np.arange(self.shape[axis]) * self.epsilon

    def sites(self) -> np.ndarray:
        """Site coordinates, shape (*shape, d)"""
        axes = [self.axis_coords(a) for a in range(self.dimension)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def site_slices(self, sub: BoxRegion) -> Tuple[slice, ...]:
        """Index slices of the sites lying in sub"""
        if sub.dimension != self.dimension or not sub.inside(self.region):
            raise InvalidArgumentError(
                f"sub-region {sub.to_dict()} is not inside grid region {self.region.to_dict()}"
            )
        slices = []
        for axis in range(self.dimension):
            lo = (sub.lower[axis] - self.region.lower[axis]) / self.epsilon
            hi = (sub.upper[axis] - self.region.lower[axis]) / self.epsilon
            start = max(0, int(math.ceil(lo - _SNAP)))
            stop = min(self.shape[axis], int(math.floor(hi + _SNAP)) + 1)
            slices.append(slice(start, stop))
        return tuple(slices)

    def refine(self) -> "GridSpec":
        return GridSpec(self.region, self.epsilon / 2)

    def to_dict(self):
        return {"region": self.region.to_dict(), "epsilon": self.epsilon}


def default_epsilon(k: AnyKernel) -> float:
    """Largest 2^-p not above a tenth of the correlation length"""
    target = 0.1 * correlation_length(k)
    p = max(0, math.ceil(math.log2(1.0 / target) - _SNAP))
    return 2.0**-p


class LabelKind(str, Enum):
    SHOT_NOISE = "shot_noise"
    GAUSSIAN = "gaussian"
    TRUNCATED_SHOT_NOISE = "truncated_shot_noise"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


@dataclass(frozen=True)
class FieldLabel:
    kind: LabelKind
    intensity: Optional[float] = None
    range: Optional[float] = None

    @classmethod
    def for_kernel(cls, k: AnyKernel, intensity: Optional[float] = None) -> "FieldLabel":
        truncated = isinstance(k, TruncatedKernel)
        r = k.range if truncated else None
        if intensity is None:
            kind = LabelKind.TRUNCATED_GAUSSIAN if truncated else LabelKind.GAUSSIAN
        else:
            kind = LabelKind.TRUNCATED_SHOT_NOISE if truncated else LabelKind.SHOT_NOISE
        return cls(kind, intensity, r)

    def to_dict(self):
        return {"kind": self.kind.value, "intensity": self.intensity, "range": self.range}


@dataclass
class GridField:
    """Samples of a field (or one of its derivatives) on the sites of a GridSpec"""

    grid: GridSpec
    values: np.ndarray
    label: FieldLabel
    alpha: MultiIndex = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InvalidArgumentError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericalConsistencyError(f"non-finite values in {self.label.kind.value} field")
        if not self.alpha:
            self.alpha = zero_index(self.grid.dimension)

    @property
    def region(self) -> BoxRegion:
        return self.grid.region

    @property
    def spacing(self) -> float:
        return self.grid.epsilon

    def restrict(self, sub: BoxRegion) -> np.ndarray:
        return self.values[self.grid.site_slices(sub)]

    def shifted(self, c: float) -> "GridField":
        if c == 0:
            return self
        return GridField(self.grid, self.values + c, self.label, self.alpha)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "shape": list(self.values.shape),
            "label": self.label.to_dict(),
            "alpha": list(self.alpha),
        }


# ============================================================================
# SYNTHESIS LATTICE
# ============================================================================


@lru_cache(maxsize=32)
def _stencil(
    k: AnyKernel,
    alpha: MultiIndex,
    delta: Tuple[float, ...],
    epsilon: float,
    j_lo: Tuple[int, ...],
    j_hi: Tuple[int, ...],
    pad: float,
) -> np.ndarray:
    axes = [delta[a] + np.arange(j_lo[a], j_hi[a] + 1) * epsilon for a in range(len(delta))]
    offsets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = np.array(eval_kernel(k, alpha, offsets))
    values[np.linalg.norm(offsets, axis=-1) > pad] = 0.0
    values.setflags(write=False)
    return values


class SynthesisLattice:
    """
    Padded noise box and convolution index algebra for one grid

    Field sites sit at x_a = lower + aε, noise cells are centred at
    c_k = (k + ½)ε. With δ = lower - c_{k_lo}, the site-to-cell offset is
    δ + (a - i)ε for mass index i, so f(a) = (masses * stencil)[a - j_lo]
    where stencil[j - j_lo] = ∂^α g(δ + jε).
    """

    def __init__(self, grid: GridSpec, pad_radius: float):
        if not pad_radius >= 0 or not math.isfinite(pad_radius):
            raise InvalidArgumentError(f"pad radius must be finite and >= 0, got {pad_radius}")
        self.grid = grid
        self.pad = float(pad_radius)
        eps = grid.epsilon
        n = grid.cells_per_unit
        lower = np.asarray(grid.region.lower)
        last_site = lower + (np.asarray(grid.shape) - 1) * eps

        self.cell_lo = np.floor(lower - self.pad - eps).astype(np.int64)
        self.cell_hi = np.ceil(last_site + self.pad + 2 * eps).astype(np.int64)
        self.k_lo = self.cell_lo * n
        self.mass_shape = tuple(int(v) for v in (self.cell_hi - self.cell_lo) * n)
        self.delta = tuple(float(v) for v in lower - (self.k_lo + 0.5) * eps)
        delta = np.asarray(self.delta)
        self.j_lo = tuple(int(v) for v in np.floor((-self.pad - delta) / eps - _SNAP))
        self.j_hi = tuple(int(v) for v in np.ceil((self.pad - delta) / eps + _SNAP))

        for axis in range(grid.dimension):
            first = -self.j_lo[axis]
            last = grid.shape[axis] - 1 - self.j_lo[axis]
            full = self.mass_shape[axis] + self.stencil_shape[axis] - 1
            if first < 0 or last >= full or self.j_hi[axis] > 0:
                raise GeometryError(
                    f"synthesis lattice misaligned on axis {axis}: "
                    f"j=[{self.j_lo[axis]},{self.j_hi[axis]}], mass={self.mass_shape[axis]}"
                )

    @property
    def stencil_shape(self) -> Tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.j_lo, self.j_hi))

    @property
    def epsilon(self) -> float:
        return self.grid.epsilon

    def unit_cells(self) -> Iterator[Tuple[int, ...]]:
        """Unit cells i + [0,1)^d of the padded box, in row-major order"""
        ranges = [range(lo, hi) for lo, hi in zip(self.cell_lo, self.cell_hi)]
        for idx in np.ndindex(*[len(r) for r in ranges]):
            yield tuple(int(r[i]) for r, i in zip(ranges, idx))

    def cell_block(self, cell: Sequence[int]) -> Tuple[slice, ...]:
        """Slice of the mass array covered by one unit cell"""
        n = self.grid.cells_per_unit
        return tuple(
            slice((c - lo) * n, (c - lo + 1) * n) for c, lo in zip(cell, self.cell_lo)
        )

    def stencil(self, k: AnyKernel, alpha: Sequence[int]) -> np.ndarray:
        """∂^α g at the site-to-cell offsets, zero beyond the pad radius"""
        alpha = check_multi_index(alpha, k)
        return _stencil(k, alpha, self.delta, self.epsilon, self.j_lo, self.j_hi, self.pad)

    def convolve(self, masses: np.ndarray, stencil: np.ndarray) -> np.ndarray:
        """Field values at the grid sites from lattice masses"""
        if masses.shape != self.mass_shape:
            raise InvalidArgumentError(f"mass array {masses.shape} != {self.mass_shape}")
        out = signal.fftconvolve(masses, stencil, mode="full")
        start = [-lo for lo in self.j_lo]
        return out[tuple(slice(s, s + n) for s, n in zip(start, self.grid.shape))]

    def compensator(self, stencil: np.ndarray) -> float:
        """ε^d Σ stencil, the lattice integral of the convolved kernel"""
        return float(np.sum(stencil)) * self.epsilon**self.grid.dimension

    def bin_points(self, points: np.ndarray) -> np.ndarray:
        """Counts of points per lattice cell of the padded box"""
        if points.size == 0:
            return np.zeros(self.mass_shape, dtype=float)
        idx = np.floor(points * self.grid.cells_per_unit).astype(np.int64) - self.k_lo
        shape = np.asarray(self.mass_shape)
        if np.any(idx < -1) or np.any(idx > shape):
            raise GeometryError("points fall outside the padded noise box")
        # rounding at a cell edge can push a point one index out
        idx = np.clip(idx, 0, shape - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.mass_shape)
        counts = np.bincount(flat, minlength=int(np.prod(shape)))
        return counts.reshape(self.mass_shape).astype(float)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "pad": self.pad,
            "cells": [self.cell_lo.tolist(), self.cell_hi.tolist()],
            "stencil_shape": list(self.stencil_shape),
        }


def check_pad(k: AnyKernel, pad_radius: Optional[float], tail_tol: Optional[float] = None) -> float:
    """
    Resolve the pad radius and check it against the L² tail tolerance

    Raises:
        PreconditionError: pad_radius is below the radius the tolerance needs
    """
    tol = settings.tail_tol if tail_tol is None else tail_tol
    required = default_pad_radius(k, tol)
    if pad_radius is None:
        return required
    if pad_radius < required * (1.0 - 1e-9):
        raise PreconditionError(
            f"pad_radius {pad_radius:.4g} is below the tail tolerance {tol:g}; "
            f"required radius is {required:.4g}"
        )
    return float(pad_radius)


# ============================================================================
# NOISE
# ============================================================================


def sample_cell_points(lattice: SynthesisLattice, lam: float, rng_stream: RngStream) -> np.ndarray:
    """Poisson points of the padded box, one cell-keyed stream per unit cell"""
    chunks: List[np.ndarray] = []
    for cell in lattice.unit_cells():
        unit = BoxRegion(cell, tuple(c + 1 for c in cell))
        chunks.append(sample_poisson(unit, lam, rng_stream.child(POINTS_TAG, *cell)).points)
    if not chunks:
        return np.empty((0, lattice.grid.dimension))
    return np.concatenate(chunks, axis=0)


def white_noise_masses(lattice: SynthesisLattice, rng_stream: RngStream) -> np.ndarray:
    """I.i.d. N(0, ε^d) lattice cell masses, one cell-keyed stream per unit cell"""
    d = lattice.grid.dimension
    n = lattice.grid.cells_per_unit
    scale = lattice.epsilon ** (d / 2)
    masses = np.empty(lattice.mass_shape, dtype=float)
    for cell in lattice.unit_cells():
        rng = rng_stream.child(WHITE_NOISE_TAG, *cell).generator()
        masses[lattice.cell_block(cell)] = rng.standard_normal((n,) * d) * scale
    return masses


# ============================================================================
# SYNTHESIZERS
# ============================================================================


def shot_noise_from_counts(
    lattice: SynthesisLattice, counts: np.ndarray, k: AnyKernel, alpha: MultiIndex, lam: float
) -> np.ndarray:
    stencil = lattice.stencil(k, alpha)
    raw = lattice.convolve(counts, stencil)
    return (raw - lam * lattice.compensator(stencil)) / math.sqrt(lam)


def synthesize_shot_noise(
    k: AnyKernel,
    alpha: Sequence[int],
    lam: float,
    grid: GridSpec,
    pad_radius: Optional[float],
    rng_stream: RngStream,
) -> GridField:
    """
    ∂^α f_λ on the grid sites

    Poisson points of intensity lam are drawn on the padded box, binned to
    the lattice, convolved with the ∂^α g stencil, compensated by the
    lattice integral of the stencil and divided by √λ.

    Raises:
        InvalidArgumentError: lam <= 0 or bad multi-index
        PreconditionError: pad_radius below the tail tolerance
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise InvalidArgumentError(f"intensity must be positive and finite, got {lam}")
    alpha = check_multi_index(alpha, k)
    pad = check_pad(k, pad_radius)
    lattice = SynthesisLattice(grid, pad)
    points = sample_cell_points(lattice, lam, rng_stream)
    counts = lattice.bin_points(points)
    values = shot_noise_from_counts(lattice, counts, k, alpha, lam)
    logger.debug(f"shot noise λ={lam:g}: {points.shape[0]} points on {lattice.mass_shape}")
    return GridField(grid, values, FieldLabel.for_kernel(k, lam), alpha)


def synthesize_gaussian(
    k: AnyKernel,
    alpha: Sequence[int],
    grid: GridSpec,
    pad_radius: Optional[float],
    rng_stream: RngStream,
) -> GridField:
    """∂^α f on the grid sites, from discrete white noise convolved with ∂^α g"""
    alpha = check_multi_index(alpha, k)
    pad = check_pad(k, pad_radius)
    lattice = SynthesisLattice(grid, pad)
    masses = white_noise_masses(lattice, rng_stream)
    values = lattice.convolve(masses, lattice.stencil(k, alpha))
    return GridField(grid, values, FieldLabel.for_kernel(k), alpha)


def shot_noise_exact(
    points: np.ndarray,
    k: AnyKernel,
    alpha: Sequence[int],
    lam: float,
    sites: np.ndarray,
    pad_radius: float,
    chunk: int = 256,
) -> np.ndarray:
    """
    Reference path: direct per-point summation

    (Σ_i ∂^α g(x - x_i) 1{|x - x_i| ≤ pad} - λ ∫_{B(pad)} ∂^α g) / √λ at each site.
    """
    alpha = check_multi_index(alpha, k)
    sites = np.asarray(sites, dtype=float)
    flat = sites.reshape(-1, k.dimension)
    out = np.zeros(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        block = flat[start:start + chunk]
        diff = block[:, None, :] - points[None, :, :]
        vals = eval_kernel(k, alpha, diff)
        vals[np.linalg.norm(diff, axis=-1) > pad_radius] = 0.0
        out[start:start + chunk] = vals.sum(axis=1)
    out = (out - lam * ball_integral(k, alpha, pad_radius)) / math.sqrt(lam)
    return out.reshape(sites.shape[:-1])


# ============================================================================
# NORMS
# ============================================================================


def _same_geometry(a: GridField, b: GridField) -> bool:
    return a.grid == b.grid and a.values.shape == b.values.shape


def sup_norm_diff(a: GridField, b: GridField, sub_region: BoxRegion) -> float:
    """max over the sites in sub_region of |a - b|"""
    if not _same_geometry(a, b):
        raise InvalidArgumentError("fields have different grid geometry")
    slices = a.grid.site_slices(sub_region)
    diff = a.values[slices] - b.values[slices]
    if diff.size == 0:
        raise InvalidArgumentError("sub-region contains no grid sites")
    return float(np.max(np.abs(diff)))


def c1_norm(a: GridField, sub_region: BoxRegion) -> float:
    """
    sup_{|α| ≤ 1} of |∂^α a| over sub_region

    Derivatives are central finite differences on the full grid (one-sided
    only at the grid boundary), read back on the sites of sub_region.
    """
    slices = a.grid.site_slices(sub_region)
    if any(s.stop - s.start < 2 for s in slices):
        raise InvalidArgumentError("c1_norm needs at least 2 sites per axis in the sub-region")
    if any(n < 2 for n in a.values.shape):
        raise InvalidArgumentError("c1_norm needs at least 2 sites per axis")
    grads = np.gradient(a.values, a.spacing)
    if a.grid.dimension == 1:
        grads = [grads]
    best = float(np.max(np.abs(a.values[slices])))
    for g in grads:
        best = max(best, float(np.max(np.abs(g[slices]))))
    return best


# ============================================================================
# DUMP FORMAT
# ============================================================================


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def dump_field(a: GridField, path: Path, seed: Optional[int] = None) -> Path:
    """Write values as little-endian float64, row-major, plus a JSON header"""
    path = Path(path)
    header = {
        "region": a.region.to_dict(),
        "epsilon": a.spacing,
        "shape": list(a.values.shape),
        "label": a.label.to_dict(),
        "alpha": list(a.alpha),
        "seed": seed,
        "dtype": "<f8",
        "order": "C",
    }
    try:
        np.ascontiguousarray(a.values, dtype="<f8").tofile(path)
        with open(_header_path(path), "w") as fh:
            json.dump(header, fh, indent=2)
    except OSError as e:
        raise ReportError(f"cannot write field dump {path}: {e}") from e
    return path


def load_field(path: Path) -> Tuple[GridField, Optional[int]]:
    """Read a field written by dump_field; returns (field, seed)"""
    path = Path(path)
    try:
        with open(_header_path(path)) as fh:
            header = json.load(fh)
        values = np.fromfile(path, dtype="<f8")
    except (OSError, ValueError) as e:
        raise ReportError(f"cannot read field dump {path}: {e}") from e
    region = BoxRegion(tuple(header["region"]["lower"]), tuple(header["region"]["upper"]))
    label = header["label"]
    grid = GridSpec(region, header["epsilon"])
    field_ = GridField(
        grid,
        values.reshape(header["shape"]),
        FieldLabel(LabelKind(label["kind"]), label["intensity"], label["range"]),
        tuple(header["alpha"]),
    )
    return field_, header.get("seed")
