import math

import numpy as np
import pytest

from shotperc.errors import InvalidArgumentError
from shotperc.point_process import (
    BoxRegion,
    PointConfiguration,
    compensated_integral,
    poisson_count,
    sample_poisson,
)
from shotperc.rng import Purpose, RngStream


class TestBoxRegion:
    def test_geometry(self):
        box = BoxRegion((0.0, -1.0), (2.0, 3.0))
        assert box.dimension == 2
        assert box.sides == (2.0, 4.0)
        assert box.volume == 8.0

    def test_rejects_degenerate_box(self):
        with pytest.raises(InvalidArgumentError):
            BoxRegion((0.0, 0.0), (1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            BoxRegion((0.0,), (1.0, 1.0))

    def test_distance(self):
        a = BoxRegion((0.0, 0.0), (1.0, 3.0))
        assert a.distance(BoxRegion((2.0, 0.0), (3.0, 3.0))) == 1.0
        assert a.distance(BoxRegion((4.0, 7.0), (5.0, 8.0))) == 5.0
        assert a.distance(BoxRegion((0.5, 0.5), (2.0, 2.0))) == 0.0

    def test_inside_and_contains(self):
        outer = BoxRegion.square(4.0)
        assert BoxRegion((1.0, 1.0), (4.0, 2.0)).inside(outer)
        assert not BoxRegion((1.0, 1.0), (4.5, 2.0)).inside(outer)
        assert outer.contains([[0.0, 0.0], [4.0, 4.0], [4.1, 0.0]]).tolist() == [
            True,
            True,
            False,
        ]

    def test_translate_and_expand(self):
        box = BoxRegion.square(1.0).translate((2.0, 3.0))
        assert box.lower == (2.0, 3.0)
        assert box.expand(0.5).sides == (2.0, 2.0)


class TestSampling:
    def test_points_inside_region(self, stream):
        region = BoxRegion((-1.0, 2.0), (3.0, 4.0))
        cfg = sample_poisson(region, 50.0, stream)
        assert np.all(region.contains(cfg.points))
        assert cfg.points.shape == (cfg.count, 2)

    def test_deterministic_per_stream(self, stream):
        region = BoxRegion.square(2.0)
        a = sample_poisson(region, 10.0, stream.child(3))
        b = sample_poisson(region, 10.0, stream.child(3))
        c = sample_poisson(region, 10.0, stream.child(4))
        np.testing.assert_array_equal(a.points, b.points)
        assert a.count != c.count or not np.array_equal(a.points, c.points)

    def test_nonpositive_intensity_rejected(self, stream):
        with pytest.raises(InvalidArgumentError):
            sample_poisson(BoxRegion.square(1.0), 0.0, stream)
        with pytest.raises(InvalidArgumentError):
            sample_poisson(BoxRegion.square(1.0), math.inf, stream)

    @pytest.mark.parametrize("mean", [0.5, 5.0, 80.0])
    def test_count_mean_and_variance(self, mean):
        rng = RngStream(11).child(Purpose.SCALAR).generator()
        counts = np.array([poisson_count(mean, rng) for _ in range(4000)])
        se = math.sqrt(mean / counts.size)
        assert abs(counts.mean() - mean) < 5 * se
        assert counts.var(ddof=1) == pytest.approx(mean, rel=0.15)
        assert counts.min() >= 0

    def test_configuration_rejects_outside_points(self):
        with pytest.raises(InvalidArgumentError):
            PointConfiguration(BoxRegion.square(1.0), 1.0, np.array([[0.5, 1.5]]))


class TestCompensatedIntegral:
    def test_empty_configuration(self):
        cfg = PointConfiguration(BoxRegion.square(1.0), 4.0, np.empty((0, 2)))
        assert compensated_integral(cfg, lambda x: np.ones(len(x)), 1.0) == pytest.approx(-2.0)

    def test_constant_function_counts_points(self):
        pts = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.2]])
        cfg = PointConfiguration(BoxRegion.square(1.0), 4.0, pts)
        # (3 - 4·1) / 2
        assert compensated_integral(cfg, lambda x: np.ones(len(x)), 1.0) == pytest.approx(-0.5)

    def test_linear_in_the_function(self, stream):
        region = BoxRegion.square(2.0)
        cfg = sample_poisson(region, 12.0, stream)

        def first(x):
            return x[:, 0]

        def second(x):
            return np.cos(x[:, 1])

        def mixed(x):
            return 3.0 * first(x) - 0.25 * second(x)

        i_first, i_second = 4.0, 2.0 * math.sin(2.0)
        expected = 3.0 * compensated_integral(cfg, first, i_first) - 0.25 * compensated_integral(
            cfg, second, i_second
        )
        value = compensated_integral(cfg, mixed, 3.0 * i_first - 0.25 * i_second)
        assert value == pytest.approx(expected, abs=1e-10)

    def test_mean_zero_unit_variance_for_indicator(self):
        region = BoxRegion.square(1.0)
        lam = 25.0
        values = np.array(
            [
                compensated_integral(
                    sample_poisson(region, lam, RngStream(5).child(i)),
                    lambda x: np.ones(len(x)),
                    1.0,
                )
                for i in range(2000)
            ]
        )
        assert abs(values.mean()) < 5 / math.sqrt(values.size)
        assert values.var(ddof=1) == pytest.approx(1.0, rel=0.15)
