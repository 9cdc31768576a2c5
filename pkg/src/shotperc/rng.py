"""
Counter-based random streams

A stream is identified by the experiment seed and an integer key path, e.g.
(purpose, replica, cell_x, cell_y). The key path seeds a Philox generator
through SeedSequence, so the numbers drawn for a given key never depend on
which other keys were used before, or on the thread that asks.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from .errors import InvalidArgumentError

SEED_MAX = 2**64 - 1


class Purpose(IntEnum):
    """Top-level stream namespaces"""
    FIELD = 1          # cell noise of a synthesized field
    BASELINE = 2       # second, independent field (independence baselines)
    COUPLING = 3       # cell randomness of a coupled pair
    MASK = 4           # random Bernoulli masks
    SCALAR = 5         # scalar draws (N, Z pairs, single-point samples)


def _zigzag(k: int) -> int:
    """Map a signed integer onto the non-negative integers"""
    k = int(k)
    return 2 * k if k >= 0 else -2 * k - 1


@dataclass(frozen=True)
class RngStream:
    """
    Handle on one counter-based stream

    Example:
        >>> root = RngStream(seed=7)
        >>> cell = root.child(Purpose.FIELD, 3, -1, 0)
        >>> z = cell.generator().standard_normal()
    """

    seed: int
    key: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) <= SEED_MAX:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned value, got {self.seed}")

    def child(self, *key: int) -> "RngStream":
        """Stream one or more levels further down the key path"""
        return RngStream(self.seed, self.key + tuple(_zigzag(k) for k in key))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream"""
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(seq))

    def to_dict(self):
        return {"seed": self.seed, "key": list(self.key)}
