"""
Statistics helpers

Log-log rate fits, binomial intervals, order-statistic errors for medians and
quantiles, jackknife errors and Kolmogorov-Smirnov distances.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

Z95 = 1.959963984540054


@dataclass
class RateFit:
    """Least-squares line through (log x, log y)"""

    x: List[float]
    y: List[float]
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float = 0.0

    def predict(self, x: float) -> float:
        return math.exp(self.intercept) * x**self.slope

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "slope_stderr": self.slope_stderr,
        }


def _line_fit(u: np.ndarray, v: np.ndarray) -> Tuple[float, float, float, float]:
    res = stats.linregress(u, v)
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 0.0
    return float(res.slope), float(res.intercept), min(max(r2, 0.0), 1.0), float(res.stderr)


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> RateFit:
    """
    Slope of log y against log x

    Example:
        >>> fit_loglog([1, 2, 4], [3.0, 3 / 2**0.5, 1.5]).slope  # -0.5
    """
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if x_arr.shape != y_arr.shape or x_arr.size < 3:
        raise InvalidArgumentError("fit_loglog needs >= 3 (x, y) pairs of equal length")
    if np.any(~np.isfinite(x_arr)) or np.any(~np.isfinite(y_arr)):
        raise InvalidArgumentError("fit_loglog needs finite input")
    if np.any(x_arr <= 0) or np.any(y_arr <= 0):
        raise InvalidArgumentError("fit_loglog needs strictly positive input")
    slope, intercept, r2, se = _line_fit(np.log(x_arr), np.log(y_arr))
    return RateFit(x_arr.tolist(), y_arr.tolist(), slope, intercept, r2, se)


def fit_loglinear(x: Sequence[float], y: Sequence[float]) -> RateFit:
    """Slope of log y against x (exponential-type decay); drops y = 0 entries"""
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    keep = y_arr > 0
    if keep.sum() < 2:
        raise InvalidArgumentError("fit_loglinear needs >= 2 positive y values")
    slope, intercept, r2, se = _line_fit(x_arr[keep], np.log(y_arr[keep]))
    return RateFit(x_arr[keep].tolist(), y_arr[keep].tolist(), slope, intercept, r2, se)


def wilson_interval(successes: int, n: int, z: float = Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion"""
    if n <= 0:
        raise InvalidArgumentError("wilson_interval needs n > 0")
    if not 0 <= successes <= n:
        raise InvalidArgumentError(f"successes {successes} outside [0, {n}]")
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def quantile_stderr(samples: Sequence[float], q: float = 0.5) -> Tuple[float, float]:
    """
    Sample q-quantile and a 1σ error from the binomial order-statistic interval
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise InvalidArgumentError("quantile_stderr needs samples")
    spread = math.sqrt(n * q * (1 - q))
    lo = int(np.clip(math.floor(n * q - spread), 0, n - 1))
    hi = int(np.clip(math.ceil(n * q + spread), 0, n - 1))
    return float(np.quantile(x, q)), float(x[hi] - x[lo]) / 2.0


def median_stderr(samples: Sequence[float]) -> Tuple[float, float]:
    return quantile_stderr(samples, 0.5)


def jackknife(values: np.ndarray, statistic: Callable[[np.ndarray], float]) -> Tuple[float, float]:
    """
    statistic(values) and its leave-one-out jackknife standard error

    values has replicas on axis 0; statistic maps such an array to a float.
    """
    values = np.asarray(values)
    n = values.shape[0]
    full = float(statistic(values))
    if n < 2:
        return full, 0.0
    loo = np.array([statistic(np.delete(values, i, axis=0)) for i in range(n)])
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return full, se


def ks_distance(samples: Sequence[float], sd: float) -> float:
    """Kolmogorov-Smirnov distance of samples to N(0, sd²)"""
    return float(stats.kstest(np.asarray(samples, dtype=float), "norm", args=(0.0, sd)).statistic)


def mean_stderr(samples: Sequence[float]) -> Tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else 0.0, 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class InequalityReport:
    """Monte Carlo estimate of both sides of lhs ≤ rhs; slack = rhs - lhs"""

    lhs: float
    rhs: float
    slack: float
    stderr: float
    replicas: int
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        """slack ≥ -2·stderr"""
        return self.slack >= -2.0 * self.stderr

    def to_dict(self):
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "stderr": self.stderr,
            "replicas": self.replicas,
            **self.details,
        }
