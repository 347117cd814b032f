import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segxai.errors import ArgumentError, StateError, ValidationError
from segxai.masks import (
    BinaryMask,
    SaliencyMap,
    auitc,
    intersect,
    iou,
    iou_is_vacuous,
    normalize,
    resample,
    threshold_top_fraction,
    threshold_value,
)


def smap(values, normalized=False):
    return SaliencyMap(np.asarray(values, dtype=float), normalized=normalized)


def mask(bits):
    return BinaryMask(np.asarray(bits, dtype=bool))


class TestNormalize:
    def test_affine_rescale(self):
        out = normalize(smap([[0, 2], [4, 8]]))
        np.testing.assert_allclose(out.values, [[0, 0.25], [0.5, 1.0]])
        assert out.normalized

    def test_constant_grid_goes_to_zero(self):
        out = normalize(smap([[3, 3], [3, 3]]))
        assert np.all(out.values == 0.0)

    def test_already_normalized_is_identity(self):
        grid = np.array([[0.0, 0.5], [0.25, 1.0]])
        np.testing.assert_array_equal(normalize(smap(grid)).values, grid)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            smap([[0.0, np.nan]])


class TestTopFraction:
    def test_distinct_values_bottom_row(self):
        grid = np.arange(16.0).reshape(4, 4)
        out = threshold_top_fraction(smap(grid), 0.25)
        expected = np.zeros((4, 4), bool)
        expected[3] = True
        np.testing.assert_array_equal(out.bits, expected)

    def test_constant_grid_tie_break_row_major(self):
        out = threshold_top_fraction(smap(np.ones((4, 4))), 0.25)
        expected = np.zeros(16, bool)
        expected[:4] = True
        np.testing.assert_array_equal(out.bits.ravel(), expected)

    def test_p_one_selects_all(self):
        out = threshold_top_fraction(smap(np.random.default_rng(0).random((5, 3))), 1.0)
        assert out.popcount == 15

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
    def test_bad_fraction_rejected(self, p):
        with pytest.raises(ArgumentError):
            threshold_top_fraction(smap(np.ones((4, 4))), p)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_cardinality_always_exact(self, seed, p):
        rng = np.random.default_rng(seed)
        grid = rng.integers(0, 3, size=(6, 7)).astype(float)  # deliberately tie-heavy
        out = threshold_top_fraction(smap(grid), p)
        assert out.popcount == int(np.ceil(p * 42))

    def test_sort_and_count_oracle(self):
        rng = np.random.default_rng(7)
        grid = rng.random((8, 8))
        out = threshold_top_fraction(smap(grid), 0.3)
        k = int(np.ceil(0.3 * 64))
        cutoff = sorted(grid.ravel(), reverse=True)[k - 1]
        assert out.popcount == k
        assert grid[out.bits].min() >= cutoff


class TestThresholdValue:
    def test_tau_zero_selects_all(self):
        out = threshold_value(normalize(smap(np.random.default_rng(1).random((4, 4)))), 0.0)
        assert out.popcount == 16

    def test_tau_one_keeps_only_max(self):
        out = threshold_value(normalize(smap([[0.1, 0.9], [0.5, 0.3]])), 1.0)
        assert out.popcount == 1
        with pytest.raises(ArgumentError):
            threshold_value(normalize(smap([[0.0, 1.0]])), 1.0001)

    def test_direct_comparison(self):
        out = threshold_value(smap([[0.0, 0.25], [0.5, 1.0]], normalized=True), 0.5)
        np.testing.assert_array_equal(out.bits, [[False, False], [True, True]])

    def test_unnormalized_rejected(self):
        with pytest.raises(StateError):
            threshold_value(smap([[0.0, 2.0]]), 0.5)

    def test_nesting_monotone(self):
        m = normalize(smap(np.random.default_rng(3).random((6, 6))))
        prev = threshold_value(m, 0.0).bits
        for tau in np.linspace(0.1, 1.0, 10):
            cur = threshold_value(m, tau).bits
            assert np.all(cur <= prev)
            prev = cur


class TestIntersect:
    def test_idempotent_and_identity(self):
        rng = np.random.default_rng(5)
        a = mask(rng.random((4, 4)) > 0.5)
        ones = mask(np.ones((4, 4)))
        np.testing.assert_array_equal(intersect(a, a).bits, a.bits)
        np.testing.assert_array_equal(intersect(a, ones).bits, a.bits)

    def test_block_overlap_single_pixel(self):
        a = np.zeros((4, 4), bool)
        a[:2, :2] = True
        b = np.zeros((4, 4), bool)
        b[1:3, 1:3] = True
        out = intersect(mask(a), mask(b))
        assert out.popcount == 1 and out.bits[1, 1]

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            intersect(mask(np.ones((2, 2))), mask(np.ones((3, 3))))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_containment(self, seed):
        rng = np.random.default_rng(seed)
        a = mask(rng.random((5, 5)) > 0.5)
        b = mask(rng.random((5, 5)) > 0.5)
        out = intersect(a, b)
        assert out.popcount <= min(a.popcount, b.popcount)
        assert np.all(out.bits <= a.bits) and np.all(out.bits <= b.bits)


class TestIou:
    def test_identical_and_disjoint(self):
        a = np.zeros((3, 3), bool)
        a[0] = True
        b = np.zeros((3, 3), bool)
        b[2] = True
        assert iou(mask(a), mask(a)) == 1.0
        assert iou(mask(a), mask(b)) == 0.0

    def test_pixel_count_oracle(self):
        a = np.zeros((4, 4), bool)
        a[0] = True
        b = np.zeros((4, 4), bool)
        b[:, 0] = True
        assert iou(mask(a), mask(b)) == pytest.approx(1 / 7)

    def test_empty_empty_is_vacuous_one(self):
        e = mask(np.zeros((3, 3)))
        assert iou(e, e) == 1.0
        assert iou_is_vacuous(e, e)
        assert not iou_is_vacuous(e, mask(np.ones((3, 3))))

    def test_exhaustive_3x3_against_brute_force(self):
        # All 2^9 x 2^9 pairs, compared against direct pixel counting.
        grids = [np.array([(c >> i) & 1 for i in range(9)], bool).reshape(3, 3) for c in range(512)]
        masks = [mask(g) for g in grids]
        for i, ga in enumerate(grids):
            for j, gb in enumerate(grids):
                inter = np.sum(ga & gb)
                union = np.sum(ga | gb)
                expected = 1.0 if union == 0 else inter / union
                assert iou(masks[i], masks[j]) == expected

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_and_range(self, seed):
        rng = np.random.default_rng(seed)
        a = mask(rng.random((4, 6)) > 0.5)
        b = mask(rng.random((4, 6)) > 0.5)
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)


class TestAuitc:
    def test_ramp_integral_is_half(self):
        grid = np.linspace(0.0, 1.0, 100).reshape(10, 10)
        ref = mask(np.ones((10, 10)))
        assert auitc(smap(grid, normalized=True), ref) == pytest.approx(0.5, abs=0.02)

    def test_degenerate_map_single_trapezoid(self):
        ref_bits = np.zeros((10, 10), bool)
        ref_bits[:3] = True
        ref = mask(ref_bits)
        zeros = smap(np.zeros((10, 10)), normalized=True)
        expected = (30 / 100) * (0.01 / 2)
        assert auitc(zeros, ref, n_samples=101) == pytest.approx(expected, abs=1e-12)

    def test_constant_full_coverage_is_one(self):
        ones = smap(np.ones((6, 6)), normalized=True)
        assert auitc(ones, mask(np.ones((6, 6)))) == pytest.approx(1.0)

    def test_sample_count_stability(self):
        rng = np.random.default_rng(11)
        base = rng.random((16, 16))
        kernel = np.ones((5, 5)) / 25.0
        smooth = np.real(np.fft.ifft2(np.fft.fft2(base, s=(16, 16)) * np.fft.fft2(kernel, s=(16, 16))))
        m = normalize(smap(smooth))
        ref = mask(rng.random((16, 16)) > 0.6)
        a101 = auitc(m, ref, 101)
        a201 = auitc(m, ref, 201)
        assert abs(a101 - a201) < 1e-3

    def test_bad_args(self):
        m = smap(np.zeros((4, 4)), normalized=True)
        with pytest.raises(ArgumentError):
            auitc(m, mask(np.ones((4, 4))), n_samples=1)
        with pytest.raises(ArgumentError):
            auitc(m, mask(np.ones((5, 5))))

    def test_fraction_sweep_mode(self):
        rng = np.random.default_rng(2)
        m = normalize(smap(rng.random((8, 8))))
        v = auitc(m, mask(np.ones((8, 8))), sweep="fraction")
        # IoU(full, top-k) = k / 64, so the integral of ceil(t*64)/64 is ~0.5.
        assert v == pytest.approx(0.5, abs=0.02)


class TestResample:
    def test_identity(self):
        rng = np.random.default_rng(4)
        m = smap(rng.random((5, 7)))
        out = resample(m, 7, 5)
        np.testing.assert_array_equal(out.values, m.values)
        b = mask(rng.random((5, 7)) > 0.5)
        np.testing.assert_array_equal(resample(b, 7, 5).bits, b.bits)

    def test_nearest_neighbor_mask_upscale(self):
        b = mask([[1, 0], [0, 0]])
        out = resample(b, 4, 4)
        expected = np.zeros((4, 4), bool)
        expected[:2, :2] = True
        np.testing.assert_array_equal(out.bits, expected)

    def test_bilinear_corner_aligned(self):
        m = smap([[0.0, 1.0]])
        out = resample(m, 4, 1)
        np.testing.assert_allclose(out.values, [[0.0, 1 / 3, 2 / 3, 1.0]])

    def test_zero_target_rejected(self):
        with pytest.raises(ArgumentError):
            resample(smap([[1.0]]), 0, 4)
