"""
Kesten construction for the finite-size criterion

A left-right crossing of the master rectangle [0,3R]×[0,9R] contains a
crossing of the strip [0,R]×[0,9R] and one of [2R,3R]×[0,9R]. A strip
crossing either fits in one of the windows [2kR, 2kR+3R] (k = 0..3), giving
a left-right crossing of an R×3R window, or its vertical extent covers one
of the overlaps [2kR, (2k+1)R] (k = 1..3) and so crosses that band top to
bottom inside a 3R×R rectangle. Each side therefore carries 4 + 3 events,
every left event lies in x ≤ R and every right event in x ≥ 2R, and

    Cross_ℓ[3R, 9R] ⊆ ∪_{i,j} (A_i ∩ B_j)

over 7 × 7 pairs at distance ≥ R, so P̂[Cross] ≤ 49·max P̂[A_i]·P̂[B_j].
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import GeometryError, InvalidArgumentError, PreconditionError
from .field_synthesis import GridField
from .model import ModelSpec
from .percolation import MIN_REPLICAS, Orientation, crossing_level, replica_stream
from .point_process import BoxRegion
from .pool import ReplicaPool, replica_map
from .stats import InequalityReport, jackknife

logger = logging.getLogger(__name__)

Rect = BoxRegion

WINDOWS = 4
BANDS = 3
UNION_BOUND = 49


@dataclass(frozen=True)
class KestenEvent:
    name: str
    rect: Rect
    orientation: Orientation

    def to_dict(self):
        return {
            "name": self.name,
            "rect": self.rect.to_dict(),
            "orientation": self.orientation.value,
        }


@dataclass
class KestenGeometry:
    box_size: float
    master: Rect
    region: Rect
    left: List[KestenEvent]
    right: List[KestenEvent]

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(len(self.left)) for j in range(len(self.right))]

    @property
    def n_pairs(self) -> int:
        return len(self.left) * len(self.right)

    def min_pair_distance(self) -> float:
        return min(a.rect.distance(b.rect) for a in self.left for b in self.right)

    def to_dict(self):
        return {
            "R": self.box_size,
            "master": self.master.to_dict(),
            "region": self.region.to_dict(),
            "pairs": self.n_pairs,
            "min_pair_distance": self.min_pair_distance(),
        }


def _side(name: str, strip_x: float, band_x: float, r: float) -> List[KestenEvent]:
    events = []
    for k in range(WINDOWS):
        window = Rect((strip_x, 2 * k * r), (strip_x + r, (2 * k + 3) * r))
        events.append(KestenEvent(f"{name}_v{k}", window, Orientation.LR))
    for k in range(1, BANDS + 1):
        band = Rect((band_x, 2 * k * r), (band_x + 3 * r, (2 * k + 1) * r))
        events.append(KestenEvent(f"{name}_h{k}", band, Orientation.TB))
    return events


def kesten_geometry(box_size: float) -> KestenGeometry:
    """
    Master rectangle, the two 7-event families and the field region

    Raises:
        GeometryError: a left/right pair closer than R or a pair count other than 49
    """
    r = float(box_size)
    if not r > 0:
        raise InvalidArgumentError(f"box size must be positive, got {box_size}")
    geometry = KestenGeometry(
        box_size=r,
        master=Rect((0.0, 0.0), (3 * r, 9 * r)),
        region=Rect((-2 * r, 0.0), (5 * r, 9 * r)),
        left=_side("A", 0.0, -2 * r, r),
        right=_side("B", 2 * r, 2 * r, r),
    )
    for a in geometry.left:
        for b in geometry.right:
            if a.rect.distance(b.rect) < r * (1 - 1e-12):
                raise GeometryError(f"{a.name} and {b.name} are closer than R={r}")
    if geometry.n_pairs != UNION_BOUND:
        raise GeometryError(f"expected {UNION_BOUND} pairs, built {geometry.n_pairs}")
    for ev in geometry.left + geometry.right:
        if not ev.rect.inside(geometry.region):
            raise GeometryError(f"{ev.name} leaves the field region")
    return geometry


def kesten_thresholds(field_: GridField, geometry: KestenGeometry) -> np.ndarray:
    """Crossing levels of the master rectangle, then the left and right events"""
    levels = [crossing_level(field_, geometry.master, Orientation.LR)]
    for ev in geometry.left + geometry.right:
        levels.append(crossing_level(field_, ev.rect, ev.orientation))
    return np.asarray(levels)


def kesten_events(
    field_: GridField, geometry: KestenGeometry, level: float
) -> Tuple[bool, np.ndarray, np.ndarray]:
    """(master occurs, left events occurring, right events occurring) at level"""
    occurs = kesten_thresholds(field_, geometry) <= level
    n = len(geometry.left)
    return bool(occurs[0]), occurs[1:n + 1], occurs[n + 1:]


def _check_alignment(geometry: KestenGeometry, epsilon: float) -> None:
    steps = geometry.box_size / epsilon
    if abs(steps - round(steps)) > 1e-9:
        raise PreconditionError(
            f"R={geometry.box_size} must be a multiple of the lattice spacing {epsilon}"
        )


def kesten_check(
    model: ModelSpec,
    box_size: float,
    level: float,
    n_reps: int,
    seed: int,
    h: float = 0.0,
    pool: Optional[ReplicaPool] = None,
) -> InequalityReport:
    """
    Inclusion audit and P̂[Cross_ℓ[3R,9R]] ≤ 49·max_{i,j} P̂[A_i]P̂[B_j]

    The right-hand side is evaluated at level ℓ + h. Every replica where the
    master crossing occurs but no pair does is counted as a violation.
    """
    if n_reps < MIN_REPLICAS:
        raise InvalidArgumentError(f"n_reps must be >= {MIN_REPLICAS}, got {n_reps}")
    geometry = kesten_geometry(box_size)
    _check_alignment(geometry, model.spacing)
    n = len(geometry.left)

    def one(i: int) -> np.ndarray:
        return kesten_thresholds(model.sample(geometry.region, replica_stream(seed, i)), geometry)

    thr = np.stack(replica_map(one, n_reps, pool))
    master = thr[:, 0] <= level
    union = np.any(thr[:, 1:n + 1] <= level, axis=1) & np.any(thr[:, n + 1:] <= level, axis=1)
    violations = int(np.sum(master & ~union))
    if violations:
        logger.error(
            f"Kesten inclusion violated on {violations} of {n_reps} replicas (R={box_size})"
        )

    events = np.concatenate([master[:, None], thr[:, 1:] <= level + h], axis=1).astype(float)

    def slack(x: np.ndarray) -> float:
        p = x.mean(axis=0)
        return float(UNION_BOUND * p[1:n + 1].max() * p[n + 1:].max() - p[0])

    value, se = jackknife(events, slack)
    p = events.mean(axis=0)
    lhs = float(p[0])
    best = float(p[1:n + 1].max() * p[n + 1:].max())
    return InequalityReport(
        lhs,
        UNION_BOUND * best,
        value,
        se,
        n_reps,
        {
            "violations": violations,
            "pairs": geometry.n_pairs,
            "max_pair_product": best,
            "h": h,
            "R": box_size,
        },
    )
