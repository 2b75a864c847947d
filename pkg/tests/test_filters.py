import numpy as np
import pytest

from curate.filters import (
    FilterThresholds,
    blur_gate,
    blur_score,
    flat_gate,
    flat_patch_score,
    patch_grid,
    sobel_magnitude,
)
from curate.imagecore import GrayImage, from_array, to_grayscale

from conftest import composite_image, noise_image, textured_image
from oracles import naive_blur_score, naive_flat_patch_score

DEFAULTS = FilterThresholds()


def gray_of(arr: np.ndarray) -> GrayImage:
    return to_grayscale(from_array(arr))


class TestBlur:
    def test_constant_scores_zero(self):
        for value in (0, 128, 255):
            g = gray_of(np.full((32, 32, 3), value, dtype=np.uint8))
            assert blur_score(g) == 0.0

    def test_impulse_score(self):
        arr = np.zeros((5, 5), dtype=np.uint8)
        arr[2, 2] = 255
        # field: one -1020, four 255, twenty 0 -> variance 52020 exactly
        assert blur_score(gray_of(arr)) == pytest.approx(52020.0, abs=1e-9)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(21)
        for _ in range(3):
            g = gray_of(rng.integers(0, 256, size=(24, 24, 3)).astype(np.uint8))
            assert blur_score(g) == pytest.approx(naive_blur_score(g.intensities),
                                                  rel=1e-9, abs=1e-6)

    def test_band_bounds_inclusive(self):
        g = gray_of(textured_image(np.random.default_rng(2), size=64))
        s = blur_score(g)
        assert blur_gate(g, FilterThresholds(blur_lo=s, blur_hi=s + 1)).passed
        assert blur_gate(g, FilterThresholds(blur_lo=s - 1, blur_hi=s)).passed
        assert not blur_gate(g, FilterThresholds(blur_lo=s + 1e-6, blur_hi=s + 1)).passed
        assert not blur_gate(g, FilterThresholds(blur_lo=0.0, blur_hi=s - 1e-6)).passed

    def test_constant_rejected_by_defaults(self):
        r = blur_gate(gray_of(np.full((64, 64, 3), 200, dtype=np.uint8)), DEFAULTS)
        assert r.score == 0.0 and not r.passed

    def test_uniform_noise_rejected_above_band(self):
        g = gray_of(noise_image(np.random.default_rng(77), size=512))
        r = blur_gate(g, DEFAULTS)
        assert r.score > 8000.0 and not r.passed

    def test_additive_constant_invariance(self):
        rng = np.random.default_rng(30)
        base = rng.uniform(0, 200, size=(32, 32))
        g1 = GrayImage(32, 32, base)
        g2 = GrayImage(32, 32, base + 50.0)
        assert blur_score(g2) == pytest.approx(blur_score(g1), abs=1e-6)

    def test_score_nonnegative(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            g = gray_of(rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8))
            assert blur_score(g) >= 0.0


class TestPatchGrid:
    def test_exact_tiling(self):
        g = GrayImage(480, 480, np.zeros((480, 480)))
        assert len(patch_grid(g, 240)) == 4

    def test_partial_tiles_dropped(self):
        g = GrayImage(500, 480, np.zeros((480, 500)))
        assert len(patch_grid(g, 240)) == 4

    def test_small_image_single_patch(self):
        g = GrayImage(100, 100, np.arange(10000, dtype=np.float64).reshape(100, 100))
        patches = patch_grid(g, 240)
        assert len(patches) == 1
        assert patches[0] is g

    def test_row_major_order(self):
        vals = np.zeros((4, 4))
        vals[0, 2] = 1.0  # row 0, col 1 patch
        vals[2, 0] = 2.0  # row 1, col 0 patch
        g = GrayImage(4, 4, vals)
        patches = patch_grid(g, 2)
        assert len(patches) == 4
        assert patches[1].intensities[0, 0] == 1.0
        assert patches[2].intensities[0, 0] == 2.0


class TestFlatGate:
    def test_constant_image_all_flat(self):
        g = gray_of(np.full((480, 480, 3), 90, dtype=np.uint8))
        r = flat_gate(g, DEFAULTS)
        assert r.patch_count == 4
        assert all(s == 0.0 for s in r.patch_scores)
        assert r.flat_count == 4 and r.flat_ratio == 1.0
        assert not r.passed

    def test_three_quarters_flat_rejected(self):
        g = gray_of(composite_image(np.random.default_rng(8)))
        r = flat_gate(g, DEFAULTS)
        assert r.flat_ratio == 0.75
        assert not r.passed

    def test_ratio_exactly_at_limit_passes(self):
        # 2 flat + 2 textured patches: ratio 0.5 is not "more than 50%"
        rng = np.random.default_rng(9)
        arr = np.full((480, 480), 128.0)
        tex = textured_image(rng, size=240)[:, :, 0].astype(np.float64)
        arr[:240, :240] = tex
        arr[240:480, 240:480] = textured_image(rng, size=240)[:, :, 0]
        g = GrayImage(480, 480, arr)
        r = flat_gate(g, DEFAULTS)
        assert r.flat_ratio == 0.5
        assert r.passed

    def test_textured_image_passes(self):
        g = gray_of(textured_image(np.random.default_rng(10), size=480))
        r = flat_gate(g, DEFAULTS)
        assert r.flat_ratio == 0.0 and r.passed

    def test_flat_count_consistent(self):
        g = gray_of(composite_image(np.random.default_rng(12)))
        r = flat_gate(g, DEFAULTS)
        assert r.flat_count == sum(1 for s in r.patch_scores
                                   if s < DEFAULTS.flat_threshold)
        assert r.flat_ratio == r.flat_count / r.patch_count

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(40)
        for _ in range(5):
            g = gray_of(rng.integers(0, 256, size=(64, 64, 3)).astype(np.uint8))
            got = flat_patch_score(g)
            want = naive_flat_patch_score(g.intensities)
            assert got == pytest.approx(want, abs=1e-6)

    def test_flip_invariance(self):
        rng = np.random.default_rng(41)
        base = rng.uniform(0, 255, size=(48, 48))
        score = flat_patch_score(GrayImage(48, 48, base))
        flipped_h = flat_patch_score(GrayImage(48, 48, base[:, ::-1].copy()))
        flipped_v = flat_patch_score(GrayImage(48, 48, base[::-1, :].copy()))
        assert flipped_h == pytest.approx(score, abs=1e-6)
        assert flipped_v == pytest.approx(score, abs=1e-6)

    def test_patch_scores_order_independent(self):
        g = gray_of(textured_image(np.random.default_rng(42), size=480))
        r = flat_gate(g, DEFAULTS)
        individual = [flat_patch_score(p) for p in reversed(patch_grid(g, 240))]
        assert list(reversed(individual)) == pytest.approx(list(r.patch_scores))

    def test_gate_reproducible(self):
        g = gray_of(textured_image(np.random.default_rng(43), size=256))
        r1 = flat_gate(g, DEFAULTS)
        r2 = flat_gate(g, DEFAULTS)
        assert r1.patch_scores == r2.patch_scores


class TestSobelMagnitude:
    def test_nonnegative(self):
        g = gray_of(noise_image(np.random.default_rng(50), size=32))
        assert sobel_magnitude(g).values.min() >= 0.0

    def test_constant_zero(self):
        g = gray_of(np.full((16, 16, 3), 60, dtype=np.uint8))
        assert np.all(sobel_magnitude(g).values == 0.0)


class TestThresholdValidation:
    def test_defaults_match_screening_recipe(self):
        t = FilterThresholds()
        assert (t.blur_lo, t.blur_hi) == (150.0, 8000.0)
        assert t.patch_size == 240
        assert t.flat_threshold == 800.0
        assert t.flat_ratio_limit == 0.5

    def test_bad_band_rejected(self):
        with pytest.raises(ValueError):
            FilterThresholds(blur_lo=100.0, blur_hi=100.0)
        with pytest.raises(ValueError):
            FilterThresholds(blur_lo=-1.0)

    def test_bad_patch_rejected(self):
        with pytest.raises(ValueError):
            FilterThresholds(patch_size=0)
