import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from shotperc.coupling import (
    BinaryExpansion,
    binomial_quantile,
    build_binary_expansion,
    couple_cell,
    couple_fields,
    couple_poisson_gaussian,
    default_depth,
    gradient_l2,
    l2_modulus,
    poincare_constant,
    poisson_quantile,
    q_modulus,
    q_profile,
    _split_tree,
)
from shotperc.errors import InvalidArgumentError, PreconditionError
from shotperc.field_synthesis import (
    GridSpec,
    sup_norm_diff,
    synthesize_gaussian,
    synthesize_shot_noise,
)
from shotperc.point_process import BoxRegion
from shotperc.rng import RngStream


def _chi_square_pvalue(samples: np.ndarray, dist, lo: int, hi: int) -> float:
    """Goodness of fit of integer samples to dist, tails pooled at lo and hi"""
    inner = range(lo + 1, hi)
    observed = [np.sum(samples <= lo)] + [np.sum(samples == k) for k in inner]
    observed.append(np.sum(samples >= hi))
    expected = [dist.cdf(lo)] + [dist.pmf(k) for k in inner] + [dist.sf(hi - 1)]
    return float(stats.chisquare(observed, samples.size * np.asarray(expected)).pvalue)


class TestBinaryExpansion:
    def test_cells_are_exact(self):
        expansion = build_binary_expansion(1, 2)
        assert expansion.cells(2)[1] == ((Fraction(1, 4),), (Fraction(1, 2),))
        assert expansion.volume(2) == Fraction(1, 4)

    def test_axes_alternate(self):
        expansion = build_binary_expansion(2, 3)
        assert [expansion.split_axis(j) for j in range(3)] == [0, 1, 0]
        assert expansion.halvings(3) == (2, 1)
        np.testing.assert_allclose(expansion.sides(3), [0.25, 0.5])

    def test_level_partitions_unit_cube(self):
        expansion = build_binary_expansion(2, 4)
        for j in range(5):
            assert sum(expansion.volume(j) for _ in expansion.cells(j)) == 1

    def test_lattice_index(self):
        expansion = build_binary_expansion(2, 2)
        assert expansion.lattice_index(2).tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]

    def test_lattice_index_matches_cells(self):
        expansion = build_binary_expansion(2, 5)
        lower, sides = expansion.level_bounds(5)
        for k, (lo, hi) in enumerate(expansion.cells(5)):
            np.testing.assert_allclose(lower[k], [float(v) for v in lo])
            np.testing.assert_allclose(lower[k] + sides, [float(v) for v in hi])

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgumentError):
            BinaryExpansion(0, 2)
        with pytest.raises(InvalidArgumentError):
            BinaryExpansion(2, 31)
        with pytest.raises(InvalidArgumentError):
            build_binary_expansion(1, 2).cell(3, 0)


class TestModuli:
    def test_identity_in_one_dimension(self):
        expansion = build_binary_expansion(1, 6)
        assert q_modulus(lambda x: x[..., 0], expansion, 0) == pytest.approx(1 / math.sqrt(12))
        # level j contributes 2^-j / 12
        for m in range(7):
            expected = math.sqrt((2 - 2.0**-m) / 12)
            assert q_modulus(lambda x: x[..., 0], expansion, m) == pytest.approx(expected)

    def test_homogeneous(self):
        expansion = build_binary_expansion(2, 4)

        def h(x):
            return np.sin(3 * x[..., 0]) * np.cos(x[..., 1])

        base = q_modulus(h, expansion, 4)
        assert q_modulus(lambda x: -2.5 * h(x), expansion, 4) == pytest.approx(2.5 * base)

    def test_constant_has_zero_modulus(self):
        expansion = build_binary_expansion(2, 3)
        assert q_modulus(lambda x: np.full(x.shape[:-1], 4.0), expansion, 3) == pytest.approx(
            0.0, abs=1e-14
        )

    def test_l2_modulus_of_single_cell(self):
        cell = ((Fraction(0), Fraction(0)), (Fraction(1, 2), Fraction(1)))
        assert l2_modulus(lambda x: x[..., 0], cell) == pytest.approx(1 / 48)

    def test_depth_beyond_expansion(self):
        with pytest.raises(InvalidArgumentError):
            q_modulus(lambda x: x[..., 0], build_binary_expansion(1, 2), 3)

    @pytest.mark.parametrize(
        "h",
        [
            lambda x: x[..., 0],
            lambda x: x[..., 0] * x[..., 1],
            lambda x: np.exp(x[..., 0] + x[..., 1]),
            lambda x: np.sin(2 * np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1]),
        ],
    )
    def test_poincare_bound_per_level(self, h):
        expansion = build_binary_expansion(2, 8)
        q = q_profile(h, expansion)
        per_level = np.diff(q**2, prepend=0.0)
        c = poincare_constant(expansion)
        grad2 = gradient_l2(h, 2) ** 2
        for j in range(9):
            bound = c * expansion.diameter(j) ** 2 * 2**j * grad2
            assert per_level[j] <= bound * 1.01

    def test_poincare_constant_one_dimension(self):
        assert poincare_constant(build_binary_expansion(1, 4)) == pytest.approx(1 / math.pi**2)


class TestQuantileCoupling:
    def test_poisson_median(self):
        assert poisson_quantile(1.0, 0.0) == 1

    def test_poisson_quantile_matches_cdf(self):
        z = np.linspace(-4.0, 4.0, 41)
        lam = 12.5
        n = poisson_quantile(lam, z)
        u = stats.norm.cdf(z)
        assert np.all(stats.poisson.cdf(n, lam) >= u - 1e-12)
        below = np.where(n > 0, stats.poisson.cdf(n - 1, lam), 0.0)
        assert np.all(below < u + 1e-12)

    def test_poisson_quantile_monotone(self):
        n = poisson_quantile(300.0, np.linspace(-6.0, 6.0, 200))
        assert np.all(np.diff(n) >= 0)

    def test_binomial_guards(self):
        assert binomial_quantile(0, 1.3) == 0
        assert binomial_quantile(5, 12.0) == 5
        assert binomial_quantile(5, -12.0) == 0
        out = binomial_quantile(np.array([1, 10, 100]), np.array([0.2, -0.4, 3.0]))
        assert np.all((0 <= out) & (out <= [1, 10, 100]))

    def test_couple_poisson_gaussian(self):
        n, z = couple_poisson_gaussian(20.0, RngStream(3))
        assert n == poisson_quantile(20.0, z)
        assert (n, z) == couple_poisson_gaussian(20.0, RngStream(3))

    def test_rejects_bad_intensity(self):
        with pytest.raises(InvalidArgumentError):
            couple_poisson_gaussian(0.0, RngStream(3))

    @pytest.mark.slow
    def test_poisson_marginal(self):
        lam = 7.0
        counts = np.array(
            [couple_poisson_gaussian(lam, RngStream(17).child(i))[0] for i in range(5000)]
        )
        assert abs(counts.mean() - lam) < 5 * math.sqrt(lam / counts.size)
        assert counts.var(ddof=1) == pytest.approx(lam, rel=0.1)

    def test_count_fits_poisson(self):
        counts = np.array(
            [couple_poisson_gaussian(20.0, RngStream(61).child(i))[0] for i in range(2000)]
        )
        assert _chi_square_pvalue(counts, stats.poisson(20.0), 12, 28) > 1e-3

    def test_default_depth(self):
        assert default_depth(64.0, 30) == 5
        assert default_depth(1.0, 6) == 1
        assert default_depth(1e12, 6) == 6


class TestSplitTree:
    def test_conservation(self):
        gen = RngStream(8).generator()
        depth = 5
        counts = np.array([0, 1, 17, 250])
        normals = gen.standard_normal((4, 2**depth))
        uniforms = gen.random((4, 2**depth))
        for coupled in (0, 3, depth):
            leaves, masses, left = _split_tree(counts, normals, uniforms, depth, coupled)
            assert leaves.shape == (4, 2**depth)
            np.testing.assert_array_equal(leaves.sum(axis=1), counts)
            assert np.all(leaves >= 0)
            np.testing.assert_allclose(masses.sum(axis=1), 0.0, atol=1e-12)
            assert left.shape == (4, 2**depth - 1)

    def test_coupled_levels_use_normals(self):
        gen = RngStream(9).generator()
        normals = gen.standard_normal((1, 4))
        uniforms = gen.random((1, 4))
        _, _, left = _split_tree(np.array([40]), normals, uniforms, 2, 2)
        assert left[0, 0] == binomial_quantile(40, normals[0, 0])


class TestCoupleCell:
    def test_points_follow_leaf_counts(self):
        expansion = build_binary_expansion(2, 4)
        points, masses, record = couple_cell(30, expansion, 2, RngStream(4))
        assert points.shape == (30, 2)
        assert np.all((points >= 0) & (points < 1))
        assert record.leaf_counts.sum() == 30
        assert masses.shape == (16,)
        lower, sides = expansion.level_bounds(4)
        owner = np.repeat(np.arange(16), record.leaf_counts)
        assert np.all(points >= lower[owner]) and np.all(points <= lower[owner] + sides)

    def test_root_split_fits_binomial(self):
        expansion = build_binary_expansion(2, 2)
        left = np.array(
            [
                couple_cell(40, expansion, 2, RngStream(62).child(i))[2].node_left_counts[0]
                for i in range(1000)
            ]
        )
        assert _chi_square_pvalue(left, stats.binom(40, 0.5), 14, 26) > 1e-3

    def test_invalid_depth(self):
        with pytest.raises(InvalidArgumentError):
            couple_cell(3, build_binary_expansion(1, 2), 3, RngStream(4))
        with pytest.raises(InvalidArgumentError):
            couple_cell(-1, build_binary_expansion(1, 2), 1, RngStream(4))


class TestCoupledFields:
    def test_needs_dyadic_spacing(self, truncated):
        grid = GridSpec(BoxRegion.square(1.0), 1 / 6)
        with pytest.raises(PreconditionError):
            couple_fields(truncated, 16.0, grid, None, None, RngStream(1))

    def test_records_agree_with_count_coupling(self, truncated, small_grid):
        pair = couple_fields(truncated, 16.0, small_grid, None, None, RngStream(1))
        assert pair.depth == default_depth(16.0, 6)
        assert pair.shot.values.shape == pair.gauss.values.shape == small_grid.shape
        assert pair.cells
        for record in pair.cells:
            assert record.count == poisson_quantile(16.0, record.gaussian)
            assert record.leaf_counts.sum() == record.count

    def test_deterministic(self, truncated, small_grid):
        a = couple_fields(truncated, 16.0, small_grid, 2, None, RngStream(5), keep_cells=False)
        b = couple_fields(truncated, 16.0, small_grid, 2, None, RngStream(5), keep_cells=False)
        np.testing.assert_array_equal(a.shot.values, b.shot.values)
        np.testing.assert_array_equal(a.gauss.values, b.gauss.values)
        assert a.cells == []

    def test_depth_out_of_range(self, truncated, small_grid):
        with pytest.raises(InvalidArgumentError):
            couple_fields(truncated, 16.0, small_grid, 7, None, RngStream(5))

    def test_coupled_error_below_independent_pair(self, truncated, small_grid):
        region = small_grid.region
        for i in range(6):
            pair = couple_fields(
                truncated, 256.0, small_grid, None, None, RngStream(40).child(i),
                keep_cells=False,
            )
            shot = synthesize_shot_noise(
                truncated, (0, 0), 256.0, small_grid, None, RngStream(41).child(i)
            )
            gauss = synthesize_gaussian(truncated, (0, 0), small_grid, None, RngStream(42).child(i))
            assert sup_norm_diff(pair.shot, pair.gauss, region) < sup_norm_diff(shot, gauss, region)

    @pytest.mark.slow
    def test_error_shrinks_with_intensity(self, truncated, small_grid):
        def mean_error(lam):
            errors = [
                sup_norm_diff(pair.shot, pair.gauss, small_grid.region)
                for pair in (
                    couple_fields(
                        truncated, lam, small_grid, None, None, RngStream(2).child(i),
                        keep_cells=False,
                    )
                    for i in range(4)
                )
            ]
            return float(np.mean(errors))

        assert mean_error(4096.0) < mean_error(16.0) / 3
