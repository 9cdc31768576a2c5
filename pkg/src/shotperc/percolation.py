"""
Excursion-set percolation

Excursion sets {f ≤ ℓ} on the lattice, crossing events with the matched
connectivity pair (4-connectivity for the set, 8-connectivity for its
complement, which makes "left-right crossing of the set" and "top-bottom
crossing of the complement" an exact partition), Monte Carlo crossing
probabilities and the finite-size critical level.

Axis 0 of a field is x: a left-right crossing joins the first and last site
columns along axis 0, a top-bottom crossing the first and last along axis 1.

Every replica is reduced to one number, its crossing level: the least ℓ at
which {f ≤ ℓ} crosses. A crossing at ℓ happens iff crossing level ≤ ℓ, so a
whole ladder of levels is evaluated on common random numbers.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, NumericalConsistencyError
from .field_synthesis import GridField
from .model import ModelSpec
from .point_process import BoxRegion
from .pool import ReplicaPool, replica_map
from .rng import Purpose, RngStream
from .stats import InequalityReport, jackknife, quantile_stderr, wilson_interval

logger = logging.getLogger(__name__)

MIN_REPLICAS = 30


class Orientation(str, Enum):
    LR = "lr"
    TB = "tb"

    @property
    def axis(self) -> int:
        return 0 if self == Orientation.LR else 1


class Connectivity(str, Enum):
    PRIMAL = "primal"  # 4-connectivity on the mask
    DUAL = "dual"  # 8-connectivity on the complement


_STRUCTURES = {
    Connectivity.PRIMAL: ndimage.generate_binary_structure(2, 1),
    Connectivity.DUAL: ndimage.generate_binary_structure(2, 2),
}


@dataclass
class ExcursionSet:
    """mask[s] = (field value at s ≤ level)"""

    field: GridField
    level: float
    mask: np.ndarray

    def sub_mask(self, rect: BoxRegion) -> np.ndarray:
        try:
            return self.mask[self.field.grid.site_slices(rect)]
        except InvalidArgumentError as e:
            raise InvalidArgumentError(f"rectangle outside the field region: {e}") from e


def excursion(field_: GridField, level: float) -> ExcursionSet:
    """Sublevel set {f ≤ level}; ties belong to the set"""
    return ExcursionSet(field_, float(level), field_.values <= level)


# ============================================================================
# UNION-FIND
# ============================================================================


class UnionFind:
    """Array-backed disjoint sets with path halving and union by size"""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return int(x)

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def connected(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)


def _neighbour_offsets(connectivity: Connectivity) -> List[Tuple[int, int]]:
    if connectivity == Connectivity.PRIMAL:
        return [(1, 0), (0, 1)]
    return [(1, 0), (0, 1), (1, 1), (1, -1)]


def _crosses_union_find(sub: np.ndarray, axis: int, connectivity: Connectivity) -> bool:
    nx, ny = sub.shape
    uf = UnionFind(nx * ny + 2)
    source, sink = nx * ny, nx * ny + 1
    for i, j in zip(*np.nonzero(sub)):
        site = i * ny + j
        if (i if axis == 0 else j) == 0:
            uf.union(site, source)
        if (i if axis == 0 else j) == sub.shape[axis] - 1:
            uf.union(site, sink)
        for di, dj in _neighbour_offsets(connectivity):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and sub[a, b]:
                uf.union(site, a * ny + b)
    return uf.connected(source, sink)


def _crosses_label(sub: np.ndarray, axis: int, connectivity: Connectivity) -> bool:
    labels, count = ndimage.label(sub, structure=_STRUCTURES[connectivity])
    if count == 0:
        return False
    first = np.unique(labels.take(0, axis=axis))
    last = np.unique(labels.take(-1, axis=axis))
    return bool(np.intersect1d(first[first > 0], last[last > 0]).size)


def crosses(
    sub: np.ndarray,
    orientation: Orientation,
    connectivity: Connectivity = Connectivity.PRIMAL,
    method: str = "label",
) -> bool:
    """Whether a component of the boolean array sub joins its two target edges"""
    if sub.ndim != 2:
        raise InvalidArgumentError("crossings are defined on 2-D masks")
    if sub.size == 0:
        return False
    if method == "label":
        return _crosses_label(sub, orientation.axis, connectivity)
    if method == "union_find":
        return _crosses_union_find(sub, orientation.axis, connectivity)
    raise InvalidArgumentError(f"unknown crossing method '{method}'")


def crossing(
    ex: ExcursionSet,
    rect: BoxRegion,
    orientation: Orientation,
    connectivity: Connectivity = Connectivity.PRIMAL,
    method: str = "label",
) -> bool:
    """
    Crossing of rect by the excursion set (primal) or by its complement (dual)

    Example:
        >>> ex = excursion(field, 0.0)
        >>> lr = crossing(ex, rect, Orientation.LR)
        >>> tb_dual = crossing(ex, rect, Orientation.TB, Connectivity.DUAL)
        >>> assert lr != tb_dual
    """
    sub = ex.sub_mask(rect)
    if connectivity == Connectivity.DUAL:
        sub = ~sub
    return crosses(sub, orientation, connectivity, method)


def crossing_level(field_: GridField, rect: BoxRegion, orientation: Orientation) -> float:
    """
    Least ℓ at which {f ≤ ℓ} crosses rect (primal connectivity)

    Bisection over the sorted site values of rect; the crossing indicator is
    monotone in ℓ.
    """
    values = field_.restrict(rect)
    if values.size == 0 or values.ndim != 2:
        raise InvalidArgumentError("rectangle contains no 2-D block of grid sites")
    levels = np.unique(values)
    lo, hi = 0, levels.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if crosses(values <= levels[mid], orientation):
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


# ============================================================================
# MONTE CARLO
# ============================================================================


@dataclass(frozen=True)
class CrossingEvent:
    rect: BoxRegion
    orientation: Orientation
    level: float

    def to_dict(self):
        return {
            "rect": self.rect.to_dict(),
            "orientation": self.orientation.value,
            "level": self.level,
        }


@dataclass
class CrossingEstimate:
    """p̂ = successes / replicas; stderr is the 95% Wilson half-width"""

    event: CrossingEvent
    replicas: int
    successes: int
    p_hat: float
    stderr: float

    @classmethod
    def from_counts(cls, event: CrossingEvent, successes: int, replicas: int) -> "CrossingEstimate":
        lo, hi = wilson_interval(successes, replicas)
        return cls(event, replicas, successes, successes / replicas, (hi - lo) / 2.0)

    def to_dict(self):
        return {
            **self.event.to_dict(),
            "replicas": self.replicas,
            "successes": self.successes,
            "p_hat": self.p_hat,
            "stderr": self.stderr,
        }


def _check_replicas(n_reps: int) -> None:
    if n_reps < MIN_REPLICAS:
        raise InvalidArgumentError(f"n_reps must be >= {MIN_REPLICAS}, got {n_reps}")


def replica_stream(seed: int, replica: int, purpose: Purpose = Purpose.FIELD) -> RngStream:
    return RngStream(seed).child(purpose, replica)


def crossing_thresholds(
    model: ModelSpec,
    rect: BoxRegion,
    orientation: Orientation,
    n_reps: int,
    seed: int,
    pool: Optional[ReplicaPool] = None,
) -> np.ndarray:
    """Crossing level of rect for each replica (field synthesized on rect)"""

    def one(i: int) -> float:
        field_ = model.sample(rect, replica_stream(seed, i))
        return crossing_level(field_, rect, orientation)

    return np.asarray(replica_map(one, n_reps, pool))


def crossing_probability(
    model: ModelSpec,
    level: float,
    rect: BoxRegion,
    orientation: Orientation,
    n_reps: int,
    seed: int,
    pool: Optional[ReplicaPool] = None,
) -> CrossingEstimate:
    """
    Monte Carlo estimate of P[Cross_ℓ(rect)]

    Example:
        >>> est = crossing_probability(model, 0.0, BoxRegion((0, 0), (16, 16)),
        ...                            Orientation.LR, 200, seed=7)
    """
    _check_replicas(n_reps)
    thresholds = crossing_thresholds(model, rect, orientation, n_reps, seed, pool)
    successes = int(np.sum(thresholds <= level))
    return CrossingEstimate.from_counts(
        CrossingEvent(rect, orientation, float(level)), successes, n_reps
    )


@dataclass
class CriticalLevelEstimate:
    """Square-crossing-½ level with its final bisection bracket"""

    lam: Optional[float]
    box_size: float
    level: float
    bracket: Tuple[float, float]
    replicas: int
    stderr: float
    thresholds: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def to_dict(self):
        return {
            "lambda": self.lam,
            "R": self.box_size,
            "level": self.level,
            "bracket": list(self.bracket),
            "replicas": self.replicas,
            "stderr": self.stderr,
        }


def bisect_half_level(
    thresholds: np.ndarray, scale: float, tol: float
) -> Tuple[float, Tuple[float, float]]:
    """
    Bisection of p̂(ℓ) = mean(thresholds ≤ ℓ) to ½

    The first bracket is the median ± scale, widened by doubling up to
    ±5·scale until p̂(lo) < ½ < p̂(hi). Stops when the bracket is narrower
    than tol or holds a single threshold. In that case p̂ jumps across ½ at
    one order statistic, and the level is read off the piecewise-linear CDF
    through (thr[j], (j + ½)/n) instead, which interpolates between the two
    order statistics around ½. The bracket is widened to contain it.

    Raises:
        NumericalConsistencyError: no bracket within ±5·scale
    """
    thr = np.sort(np.asarray(thresholds, dtype=float))

    def p_hat(level: float) -> float:
        return np.searchsorted(thr, level, side="right") / thr.size

    centre = float(np.median(thr))
    width = scale
    lo, hi = centre - width, centre + width
    while not (p_hat(lo) < 0.5 < p_hat(hi)):
        if width >= 5.0 * scale:
            raise NumericalConsistencyError(
                f"crossing probability does not bracket 1/2 within ±{5 * scale:.3g} "
                f"of {centre:.4g}"
            )
        width = min(2.0 * width, 5.0 * scale)
        lo, hi = centre - width, centre + width
        logger.warning(f"widening critical-level bracket to ±{width:.3g}")

    while hi - lo >= tol:
        inside = np.searchsorted(thr, hi, side="right") - np.searchsorted(thr, lo, side="right")
        if inside <= 1:
            level = float(np.interp((thr.size - 1) / 2.0, np.arange(thr.size), thr))
            logger.debug(f"bisection stopped on a single threshold, interpolated {level:.6g}")
            return level, (min(lo, level), max(hi, level))
        mid = (lo + hi) / 2.0
        if p_hat(mid) <= 0.5:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0, (lo, hi)


def estimate_critical_level(
    model: ModelSpec,
    box_size: float,
    n_reps: int,
    tol: float,
    seed: int,
    pool: Optional[ReplicaPool] = None,
) -> CriticalLevelEstimate:
    """
    Finite-size critical level: ℓ with P[Cross_ℓ[R, R]] = ½

    Crossing levels of the R×R square are computed once per replica and the
    bisection runs on their empirical distribution.
    """
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    _check_replicas(n_reps)
    rect = BoxRegion((0.0, 0.0), (box_size, box_size))
    thresholds = crossing_thresholds(model, rect, Orientation.LR, n_reps, seed, pool)
    level, bracket = bisect_half_level(thresholds, math.sqrt(model.variance()), tol)
    _, stderr = quantile_stderr(thresholds, 0.5)
    logger.info(
        f"critical level {level:.5g} ± {stderr:.2g} "
        f"({model.kind.value}, λ={model.lam}, R={box_size})"
    )
    return CriticalLevelEstimate(model.lam, box_size, level, bracket, n_reps, stderr, thresholds)


# ============================================================================
# SPRINKLED DECOUPLING
# ============================================================================


def sprinkling_geometry(box_size: float) -> Tuple[BoxRegion, BoxRegion, BoxRegion]:
    """Field region and the two R×3R rectangles of A and B, distance R apart"""
    r = box_size
    a = BoxRegion((0.0, 0.0), (r, 3 * r))
    b = BoxRegion((2 * r, 0.0), (3 * r, 3 * r))
    return BoxRegion((0.0, 0.0), (3 * r, 3 * r)), a, b


def sprinkling_check(
    model: ModelSpec,
    box_size: float,
    level: float,
    h: float,
    n_reps: int,
    seed: int,
    independent: bool = False,
    pool: Optional[ReplicaPool] = None,
) -> InequalityReport:
    """
    P[A ∩ B at ℓ] ≤ P[A at ℓ+h]·P[B at ℓ+h] (+ e(R))

    A and B are left-right crossings of R×3R rectangles at distance R. With
    independent=True, B is read from a second, independent field.

    Returns:
        InequalityReport with slack = RHS - LHS and its jackknife stderr
    """
    _check_replicas(n_reps)
    region, rect_a, rect_b = sprinkling_geometry(box_size)

    def one(i: int) -> Tuple[float, float]:
        field_ = model.sample(region, replica_stream(seed, i))
        other = field_
        if independent:
            other = model.sample(region, replica_stream(seed, i, Purpose.BASELINE))
        return (
            crossing_level(field_, rect_a, Orientation.LR),
            crossing_level(other, rect_b, Orientation.LR),
        )

    thr = np.asarray(replica_map(one, n_reps, pool))
    events = np.stack(
        [
            (thr[:, 0] <= level) & (thr[:, 1] <= level),
            thr[:, 0] <= level + h,
            thr[:, 1] <= level + h,
        ],
        axis=1,
    ).astype(float)

    def slack(x: np.ndarray) -> float:
        return float(x[:, 1].mean() * x[:, 2].mean() - x[:, 0].mean())

    value, se = jackknife(events, slack)
    lhs = float(events[:, 0].mean())
    rhs = float(events[:, 1].mean() * events[:, 2].mean())
    return InequalityReport(
        lhs, rhs, value, se, n_reps, {"h": h, "R": box_size, "independent": independent}
    )


# ============================================================================
# DISCRETIZATION GUARD
# ============================================================================


def epsilon_stability(
    model: ModelSpec,
    box_size: float,
    level: float,
    n_reps: int,
    seed: int,
    pool: Optional[ReplicaPool] = None,
) -> InequalityReport:
    """
    |p̂(ε) - p̂(ε/2)| against 3 stderr for the square crossing at level

    Shot noise replicas share their points across the two spacings.

    Returns:
        InequalityReport with lhs = |Δp̂|, rhs = 3·stderr of Δp̂
    """
    _check_replicas(n_reps)
    rect = BoxRegion((0.0, 0.0), (box_size, box_size))
    fine = model.with_epsilon(model.spacing / 2)
    coarse_thr = crossing_thresholds(model, rect, Orientation.LR, n_reps, seed, pool)
    fine_thr = crossing_thresholds(fine, rect, Orientation.LR, n_reps, seed, pool)
    pairs = np.stack([coarse_thr <= level, fine_thr <= level], axis=1).astype(float)
    diff, se = jackknife(pairs, lambda x: float(x[:, 0].mean() - x[:, 1].mean()))
    return InequalityReport(
        abs(diff),
        3.0 * se,
        3.0 * se - abs(diff),
        se,
        n_reps,
        {
            "p_coarse": float(pairs[:, 0].mean()),
            "p_fine": float(pairs[:, 1].mean()),
            "epsilon": model.spacing,
        },
    )
