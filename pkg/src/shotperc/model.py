"""
Field models

A ModelSpec says what one Monte Carlo replica synthesizes: which field, with
which kernel, intensity, truncation, lattice spacing, padding and constant
shift. Percolation estimators only ever talk to fields through it.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .errors import InvalidArgumentError
from .field_synthesis import (
    GridField,
    GridSpec,
    default_epsilon,
    synthesize_gaussian,
    synthesize_shot_noise,
)
from .kernel import AnyKernel, Kernel, TruncatedKernel, variance, zero_index
from .point_process import BoxRegion
from .rng import RngStream

logger = logging.getLogger(__name__)


class FieldKind(str, Enum):
    GAUSSIAN = "gaussian"
    SHOT_NOISE = "shot_noise"


@dataclass(frozen=True)
class ModelSpec:
    """
    Example:
        >>> model = ModelSpec.shot_noise(Kernel.rational(3.0), lam=64.0)
        >>> field = model.sample(BoxRegion((0, 0), (8, 8)), RngStream(1).child(1, 0))
    """

    kind: FieldKind
    kernel: Kernel
    lam: Optional[float] = None
    truncation_range: Optional[float] = None
    epsilon: Optional[float] = None
    pad: Optional[float] = None
    shift: float = 0.0

    def __post_init__(self):
        if self.kind == FieldKind.SHOT_NOISE and not (self.lam and self.lam > 0):
            raise InvalidArgumentError("shot noise model needs a positive intensity")
        if self.kind == FieldKind.GAUSSIAN and self.lam is not None:
            raise InvalidArgumentError("gaussian model takes no intensity")

    @classmethod
    def gaussian(cls, kernel: Kernel, **kwargs) -> "ModelSpec":
        return cls(FieldKind.GAUSSIAN, kernel, **kwargs)

    @classmethod
    def shot_noise(cls, kernel: Kernel, lam: float, **kwargs) -> "ModelSpec":
        return cls(FieldKind.SHOT_NOISE, kernel, float(lam), **kwargs)

    @property
    def effective_kernel(self) -> AnyKernel:
        if self.truncation_range is None:
            return self.kernel
        return TruncatedKernel(self.kernel, self.truncation_range)

    @property
    def spacing(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return default_epsilon(self.kernel)

    def grid(self, region: BoxRegion) -> GridSpec:
        return GridSpec(region, self.spacing)

    def with_shift(self, c: float) -> "ModelSpec":
        return replace(self, shift=self.shift + c)

    def with_epsilon(self, epsilon: float) -> "ModelSpec":
        return replace(self, epsilon=epsilon)

    def variance(self) -> float:
        """K(0) of the (possibly truncated) kernel"""
        return variance(self.effective_kernel)

    def sample(self, region: BoxRegion, rng_stream: RngStream) -> GridField:
        """One realization on the grid over region, plus the constant shift"""
        k = self.effective_kernel
        alpha = zero_index(k.dimension)
        grid = self.grid(region)
        if self.kind == FieldKind.SHOT_NOISE:
            field = synthesize_shot_noise(k, alpha, self.lam, grid, self.pad, rng_stream)
        else:
            field = synthesize_gaussian(k, alpha, grid, self.pad, rng_stream)
        return field.shifted(self.shift)

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "kernel": self.kernel.to_dict(),
            "lambda": self.lam,
            "r": self.truncation_range,
            "epsilon": self.spacing,
            "pad": self.pad,
            "shift": self.shift,
        }
