import math

import numpy as np
import pytest

from shotperc.errors import InvalidArgumentError
from shotperc.stats import (
    InequalityReport,
    fit_loglinear,
    fit_loglog,
    jackknife,
    ks_distance,
    mean_stderr,
    median_stderr,
    wilson_interval,
)


class TestFitLogLog:
    def test_inverse_square(self):
        x = [1.0, 2.0, 4.0, 8.0]
        fit = fit_loglog(x, [1 / v**2 for v in x])
        assert fit.slope == pytest.approx(-2.0)
        assert fit.intercept == pytest.approx(0.0, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0)

    def test_constant(self):
        fit = fit_loglog([1.0, 10.0, 100.0], [5.0, 5.0, 5.0])
        assert fit.slope == pytest.approx(0.0, abs=1e-12)
        assert fit.predict(7.0) == pytest.approx(5.0)

    def test_square_root_with_intercept(self):
        fit = fit_loglog([1, 2, 4], [3.0, 3 / 2**0.5, 1.5])
        assert fit.slope == pytest.approx(-0.5)
        assert fit.intercept == pytest.approx(math.log(3.0))

    @pytest.mark.parametrize(
        "x, y",
        [
            ([1.0, 2.0], [1.0, 2.0]),
            ([1.0, 2.0, 3.0], [1.0, 0.0, 2.0]),
            ([1.0, -2.0, 3.0], [1.0, 1.0, 2.0]),
            ([1.0, 2.0, 3.0], [1.0, float("nan"), 2.0]),
            ([1.0, 2.0, 3.0], [1.0, 2.0]),
        ],
    )
    def test_rejects_bad_input(self, x, y):
        with pytest.raises(InvalidArgumentError):
            fit_loglog(x, y)

    def test_loglinear_drops_zeros(self):
        x = [1.0, 2.0, 3.0, 4.0]
        fit = fit_loglinear(x, [math.exp(-2.0), math.exp(-4.0), 0.0, math.exp(-8.0)])
        assert fit.slope == pytest.approx(-2.0)
        assert fit.x == [1.0, 2.0, 4.0]


class TestIntervals:
    def test_wilson_contains_estimate(self):
        lo, hi = wilson_interval(30, 100)
        assert lo < 0.3 < hi
        assert hi - lo == pytest.approx(0.1769, abs=0.001)

    def test_wilson_extremes(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == pytest.approx(0.0, abs=1e-12) and 0 < hi < 0.1
        lo, hi = wilson_interval(50, 50)
        assert hi == pytest.approx(1.0) and 0.9 < lo < 1.0

    def test_wilson_rejects(self):
        with pytest.raises(InvalidArgumentError):
            wilson_interval(3, 0)
        with pytest.raises(InvalidArgumentError):
            wilson_interval(11, 10)

    def test_median_stderr(self):
        samples = np.arange(101, dtype=float)
        median, se = median_stderr(samples)
        assert median == 50.0
        assert 3.0 < se < 7.0

    def test_mean_stderr(self):
        mean, se = mean_stderr([1.0, 2.0, 3.0, 4.0])
        assert mean == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert mean_stderr([]) == (0.0, 0.0)


class TestJackknife:
    def test_mean_matches_standard_error(self):
        values = np.random.default_rng(0).standard_normal(50)
        full, se = jackknife(values, np.mean)
        assert full == pytest.approx(values.mean())
        assert se == pytest.approx(values.std(ddof=1) / math.sqrt(50))

    def test_single_value(self):
        assert jackknife(np.array([2.0]), np.mean) == (2.0, 0.0)

    def test_rows_are_replicas(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        full, se = jackknife(x, lambda a: float(a[:, 0].mean() * a[:, 1].mean()))
        assert full == 0.25
        assert se > 0


class TestMisc:
    def test_ks_distance_small_for_matching_law(self):
        samples = np.random.default_rng(1).normal(0.0, 2.0, 4000)
        assert ks_distance(samples, 2.0) < 0.035
        assert ks_distance(samples, 0.5) > 0.2

    def test_inequality_report(self):
        assert InequalityReport(0.5, 0.4, -0.1, 0.06, 100).holds
        assert not InequalityReport(0.5, 0.4, -0.1, 0.01, 100).holds
        d = InequalityReport(0.1, 0.2, 0.1, 0.01, 40, {"h": 0.5}).to_dict()
        assert d["h"] == 0.5 and d["replicas"] == 40
