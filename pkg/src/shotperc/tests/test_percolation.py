import numpy as np
import pytest

from shotperc.errors import InvalidArgumentError, NumericalConsistencyError
from shotperc.field_synthesis import FieldLabel, GridField, GridSpec, LabelKind
from shotperc.model import ModelSpec
from shotperc.percolation import (
    Connectivity,
    Orientation,
    UnionFind,
    bisect_half_level,
    crosses,
    crossing,
    crossing_level,
    crossing_probability,
    crossing_thresholds,
    epsilon_stability,
    estimate_critical_level,
    excursion,
    sprinkling_check,
    sprinkling_geometry,
)
from shotperc.point_process import BoxRegion
from shotperc.pool import ReplicaPool
from shotperc.rng import Purpose, RngStream


def unit_field(values: np.ndarray) -> GridField:
    """Field on the unit-spaced grid with one site per array entry"""
    nx, ny = values.shape
    grid = GridSpec(BoxRegion((0.0, 0.0), (nx - 1.0, ny - 1.0)), 1.0)
    return GridField(grid, values.astype(float), FieldLabel(LabelKind.GAUSSIAN))


def random_masks(count: int, side: int = 12):
    for i in range(count):
        gen = RngStream(31).child(Purpose.MASK, i).generator()
        p = 0.3 + 0.5 * gen.random()
        yield gen.random((side, side + i % 5)) < p


class TestUnionFind:
    def test_union_and_find(self):
        uf = UnionFind(6)
        uf.union(0, 1)
        uf.union(2, 3)
        uf.union(1, 3)
        assert uf.connected(0, 2)
        assert not uf.connected(0, 4)
        assert uf.size[uf.find(0)] == 4


class TestCrosses:
    @pytest.mark.parametrize("orientation", list(Orientation))
    @pytest.mark.parametrize("connectivity", list(Connectivity))
    def test_full_and_empty(self, orientation, connectivity):
        assert crosses(np.ones((5, 7), dtype=bool), orientation, connectivity)
        assert not crosses(np.zeros((5, 7), dtype=bool), orientation, connectivity)

    def test_blocking_column(self):
        mask = np.ones((6, 6), dtype=bool)
        mask[2, :] = False
        assert not crosses(mask, Orientation.LR)
        assert crosses(mask, Orientation.TB)

    def test_diagonal_needs_eight_connectivity(self):
        mask = np.eye(6, dtype=bool)
        assert not crosses(mask, Orientation.LR, Connectivity.PRIMAL)
        assert crosses(mask, Orientation.LR, Connectivity.DUAL)

    def test_unknown_method(self):
        with pytest.raises(InvalidArgumentError):
            crosses(np.ones((3, 3), dtype=bool), Orientation.LR, method="flood")

    def test_needs_two_dimensions(self):
        with pytest.raises(InvalidArgumentError):
            crosses(np.ones(4, dtype=bool), Orientation.LR)

    def test_union_find_agrees_with_labelling(self):
        for mask in random_masks(60):
            for orientation in Orientation:
                for connectivity in Connectivity:
                    assert crosses(mask, orientation, connectivity, "label") == crosses(
                        mask, orientation, connectivity, "union_find"
                    )

    def test_duality(self):
        """Exactly one of: primal left-right crossing, dual top-bottom crossing"""
        for mask in random_masks(200):
            rect = BoxRegion((0.0, 0.0), (mask.shape[0] - 1.0, mask.shape[1] - 1.0))
            ex = excursion(unit_field(np.where(mask, -1.0, 1.0)), 0.0)
            lr = crossing(ex, rect, Orientation.LR)
            tb_dual = crossing(ex, rect, Orientation.TB, Connectivity.DUAL)
            assert lr != tb_dual


class TestExcursion:
    def test_ties_belong_to_the_set(self):
        ex = excursion(unit_field(np.array([[0.0, 1.0], [-1.0, 0.5]])), 0.5)
        assert ex.mask.tolist() == [[True, False], [True, True]]

    def test_rectangle_outside_region(self):
        ex = excursion(unit_field(np.zeros((4, 4))), 0.0)
        with pytest.raises(InvalidArgumentError):
            ex.sub_mask(BoxRegion((0.0, 0.0), (5.0, 2.0)))


class TestCrossingLevel:
    def _field(self, seed: int) -> GridField:
        return unit_field(RngStream(seed).generator().standard_normal((15, 11)))

    def test_level_is_the_first_crossing(self):
        for seed in range(20):
            field_ = self._field(seed)
            rect = field_.grid.region
            level = crossing_level(field_, rect, Orientation.LR)
            assert crossing(excursion(field_, level), rect, Orientation.LR)
            below = field_.values[field_.values < level]
            if below.size:
                assert not crossing(excursion(field_, below.max()), rect, Orientation.LR)

    def test_monotone_in_level(self):
        field_ = self._field(3)
        rect = field_.grid.region
        level = crossing_level(field_, rect, Orientation.TB)
        for up in (0.01, 0.5, 3.0):
            assert crossing(excursion(field_, level + up), rect, Orientation.TB)

    def test_shift_equivariance(self):
        field_ = self._field(4)
        rect = BoxRegion((2.0, 1.0), (12.0, 9.0))
        base = crossing_level(field_, rect, Orientation.LR)
        assert crossing_level(field_.shifted(1.75), rect, Orientation.LR) == pytest.approx(
            base + 1.75
        )

    def test_sub_rectangle_crossing_is_harder(self):
        field_ = self._field(5)
        wide = BoxRegion((0.0, 0.0), (14.0, 10.0))
        narrow = BoxRegion((0.0, 4.0), (14.0, 6.0))
        assert crossing_level(field_, narrow, Orientation.LR) >= crossing_level(
            field_, wide, Orientation.LR
        )


class TestBisection:
    def test_uniform_thresholds(self):
        level, (lo, hi) = bisect_half_level(np.linspace(-1.0, 1.0, 101), 1.0, 0.01)
        assert abs(level) <= 0.03
        assert lo <= level <= hi

    def test_equal_thresholds(self):
        level, _ = bisect_half_level(np.full(40, 3.0), 1.0, 0.001)
        assert level == pytest.approx(3.0, abs=0.001)

    def test_no_bracket(self):
        thresholds = np.concatenate([np.full(20, -10.0), np.full(20, 10.0)])
        with pytest.raises(NumericalConsistencyError):
            bisect_half_level(thresholds, 1.0, 0.01)

    def test_single_threshold_interpolates_even_count(self):
        level, (lo, hi) = bisect_half_level(np.array([3.0, 0.0, 2.0, 1.0]), 1.0, 1e-6)
        assert level == pytest.approx(1.5)
        assert lo <= level <= hi

    def test_single_threshold_odd_count(self):
        level, (lo, hi) = bisect_half_level(np.array([0.0, 1.0, 2.0]), 1.0, 1e-6)
        assert level == pytest.approx(1.0)
        assert lo <= level <= hi


class TestMonteCarlo:
    def test_sprinkling_geometry(self):
        region, a, b = sprinkling_geometry(4.0)
        assert a.distance(b) == 4.0
        assert a.inside(region) and b.inside(region)

    def test_too_few_replicas(self, rational):
        with pytest.raises(InvalidArgumentError):
            crossing_probability(
                ModelSpec.gaussian(rational), 0.0, BoxRegion.square(2.0), Orientation.LR, 10, 1
            )

    def test_thresholds_do_not_depend_on_threads(self, truncated):
        model = ModelSpec.gaussian(truncated.base, truncation_range=truncated.range, epsilon=1 / 8)
        rect = BoxRegion.square(2.0)
        serial = crossing_thresholds(model, rect, Orientation.LR, 4, seed=99)
        with ReplicaPool(threads=2) as pool:
            threaded = crossing_thresholds(model, rect, Orientation.LR, 4, seed=99, pool=pool)
        np.testing.assert_array_equal(serial, threaded)

    @pytest.mark.slow
    def test_probability_matches_thresholds(self, truncated):
        model = ModelSpec.shot_noise(
            truncated.base, 64.0, truncation_range=truncated.range, epsilon=1 / 8
        )
        rect = BoxRegion.square(2.0)
        thresholds = crossing_thresholds(model, rect, Orientation.LR, 40, seed=5)
        level = float(np.median(thresholds))
        est = crossing_probability(model, level, rect, Orientation.LR, 40, seed=5)
        assert est.successes == int(np.sum(thresholds <= level))
        assert 0 < est.stderr < 0.5


def _gaussian(truncated, epsilon: float = 1 / 4) -> ModelSpec:
    return ModelSpec.gaussian(truncated.base, truncation_range=truncated.range, epsilon=epsilon)


class TestCriticalLevel:
    def test_bad_tolerance(self, truncated):
        with pytest.raises(InvalidArgumentError):
            estimate_critical_level(_gaussian(truncated), 2.0, 30, 0.0, seed=1)

    def test_shift_moves_level_by_the_same_amount(self, truncated):
        model = _gaussian(truncated)
        base = estimate_critical_level(model, 2.0, 30, 0.01, seed=17)
        moved = estimate_critical_level(model.with_shift(0.75), 2.0, 30, 0.01, seed=17)
        assert moved.level == pytest.approx(base.level + 0.75, abs=0.01)
        np.testing.assert_allclose(moved.thresholds, base.thresholds + 0.75)
        assert moved.stderr == pytest.approx(base.stderr)

    def test_estimate_lies_in_bracket(self, truncated):
        est = estimate_critical_level(_gaussian(truncated), 2.0, 30, 0.01, seed=2)
        lo, hi = est.bracket
        assert lo <= est.level <= hi
        assert est.replicas == 30 and est.stderr > 0

    @pytest.mark.slow
    def test_symmetric_gaussian_is_critical_near_zero(self, truncated):
        est = estimate_critical_level(_gaussian(truncated, 1 / 8), 2.0, 100, 0.005, seed=23)
        assert abs(est.level) <= 3 * est.stderr


class TestSprinkling:
    def test_large_sprinkle_always_holds(self, truncated):
        report = sprinkling_check(_gaussian(truncated), 1.0, 0.0, 50.0, 30, seed=4)
        assert report.rhs == 1.0
        assert report.slack == pytest.approx(1.0 - report.lhs)
        assert report.holds

    def test_independent_baseline_reports_its_slack(self, truncated):
        report = sprinkling_check(
            _gaussian(truncated), 1.0, 0.0, 0.0, 60, seed=4, independent=True
        )
        assert report.details["independent"] is True
        assert report.slack == pytest.approx(report.rhs - report.lhs)
        assert np.isfinite(report.stderr)
        assert abs(report.slack) <= 4 * report.stderr + 1e-12


class TestEpsilonStability:
    def test_report_fields(self, truncated):
        model = ModelSpec.shot_noise(
            truncated.base, 16.0, truncation_range=truncated.range, epsilon=1 / 4
        )
        report = epsilon_stability(model, 2.0, 0.0, 30, seed=6)
        p_coarse, p_fine = report.details["p_coarse"], report.details["p_fine"]
        assert 0.0 <= p_coarse <= 1.0 and 0.0 <= p_fine <= 1.0
        assert report.lhs == pytest.approx(abs(p_coarse - p_fine))
        assert report.rhs == pytest.approx(3 * report.stderr)
        assert report.details["epsilon"] == 1 / 4

    @pytest.mark.slow
    def test_halving_spacing_keeps_probability(self, truncated):
        model = ModelSpec.shot_noise(
            truncated.base, 64.0, truncation_range=truncated.range, epsilon=1 / 4
        )
        assert epsilon_stability(model, 2.0, 0.0, 100, seed=6).holds


@pytest.mark.slow
class TestCriticalWindow:
    def test_self_dual_square_is_half(self, truncated):
        est = crossing_probability(
            _gaussian(truncated, 1 / 8), 0.0, BoxRegion.square(2.0), Orientation.LR, 1000, 31
        )
        assert 0.45 <= est.p_hat <= 0.55

    def test_crossing_sharpens_with_box_size(self, truncated):
        model = _gaussian(truncated)
        delta = 0.5 * np.sqrt(model.variance())
        gaps = []
        for side in (1.0, 4.0):
            thr = crossing_thresholds(model, BoxRegion.square(side), Orientation.LR, 200, 12)
            gaps.append(np.mean(thr <= delta) - np.mean(thr <= -delta))
        assert gaps[1] > gaps[0]
