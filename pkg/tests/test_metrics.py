import math

import numpy as np
import pytest

from spadvid.metrics import (
    estimate_hot_mask,
    median_hot_pixel_fix,
    psnr,
    sequence_report,
    ssim,
)


class TestPsnr:
    def test_identical_is_infinite(self):
        x = np.random.default_rng(0).random((4, 8, 8))
        assert math.isinf(psnr(x, x))

    def test_constant_offset_closed_form(self):
        a = np.full((5, 10, 10), 0.5)
        b = a + 0.1
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 6, 6)), rng.random((3, 6, 6))
        assert psnr(a, b) == pytest.approx(psnr(b, a), rel=1e-15)

    def test_monotone_in_noise_level(self):
        rng = np.random.default_rng(2)
        clean = rng.random((4, 16, 16)) * 0.5 + 0.25
        values = []
        for sigma in (0.01, 0.03, 0.09):
            noisy = clean + rng.normal(0, sigma, clean.shape)
            values.append(psnr(clean, noisy))
        assert values[0] > values[1] > values[2]

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))


class TestSsim:
    def test_identical_is_one(self):
        x = np.random.default_rng(3).random((2, 16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_binary_nonpositive(self):
        rng = np.random.default_rng(4)
        a = (rng.random((2, 24, 24)) > 0.5).astype(float)
        assert ssim(a, 1.0 - a) <= 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a, b = rng.random((2, 20, 20)), rng.random((2, 20, 20))
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_matches_reference_implementation(self):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(6)
        for _ in range(5):
            a = rng.random((24, 31))
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
            ref = skimage_metrics.structural_similarity(
                a,
                b,
                win_size=11,
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
                data_range=1.0,
            )
            assert ssim(a, b) == pytest.approx(ref, abs=1e-4)

    def test_window_larger_than_frame(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((2, 8, 8)), np.zeros((2, 8, 8)))

    def test_ranges(self):
        rng = np.random.default_rng(7)
        a, b = rng.random((2, 16, 16)), rng.random((2, 16, 16))
        assert -1.0 <= ssim(a, b) <= 1.0


class TestMedianHotPixelFix:
    def test_empty_mask_unchanged(self):
        frame = np.random.default_rng(8).random((6, 6))
        out = median_hot_pixel_fix(frame, np.zeros((6, 6), dtype=bool))
        np.testing.assert_array_equal(out, frame)

    def test_single_hot_in_constant_frame(self):
        frame = np.full((5, 5), 0.3)
        frame[2, 2] = 1.0
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        out = median_hot_pixel_fix(frame, mask)
        assert out[2, 2] == pytest.approx(0.3)

    def test_even_count_median_hand_case(self):
        # neighborhood values 1..8 around the hot center: median = 4.5
        frame = np.zeros((3, 3))
        frame.flat[[0, 1, 2, 3, 5, 6, 7, 8]] = [1, 2, 3, 4, 5, 6, 7, 8]
        frame[1, 1] = 99.0
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        out = median_hot_pixel_fix(frame, mask)
        assert out[1, 1] == pytest.approx(4.5)

    def test_excludes_other_hot_neighbors(self):
        frame = np.full((3, 3), 0.2)
        frame[1, 1] = 1.0
        frame[1, 2] = 1.0
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = mask[1, 2] = True
        out = median_hot_pixel_fix(frame, mask)
        assert out[1, 1] == pytest.approx(0.2)
        assert out[1, 2] == pytest.approx(0.2)

    def test_border_clips(self):
        frame = np.full((4, 4), 0.6)
        frame[0, 0] = 1.0
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, 0] = True
        out = median_hot_pixel_fix(frame, mask)
        assert out[0, 0] == pytest.approx(0.6)

    def test_fully_masked_neighborhood_warns(self):
        frame = np.full((2, 2), 1.0)
        mask = np.ones((2, 2), dtype=bool)
        with pytest.warns(UserWarning, match="fully masked"):
            out = median_hot_pixel_fix(frame, mask)
        np.testing.assert_array_equal(out, frame)

    def test_idempotent_for_fixed_mask(self):
        rng = np.random.default_rng(9)
        frame = rng.random((12, 12))
        mask = rng.random((12, 12)) < 0.05
        once = median_hot_pixel_fix(frame, mask)
        twice = median_hot_pixel_fix(once, mask)
        np.testing.assert_array_equal(once, twice)


class TestEstimateHotMask:
    def test_flags_persistent_saturation(self):
        frames = np.full((120, 8, 8), 0.4)
        frames[:, 3, 4] = 1.0
        mask = estimate_hot_mask(frames)
        assert mask[3, 4]
        assert mask.sum() == 1

    def test_short_sequence_warns(self):
        with pytest.warns(UserWarning, match="unreliable"):
            estimate_hot_mask(np.zeros((10, 4, 4)))


class TestSequenceReport:
    def test_fields(self):
        rng = np.random.default_rng(10)
        ref = rng.random((3, 16, 16))
        test = np.clip(ref + rng.normal(0, 0.05, ref.shape), 0, 1)
        report = sequence_report(ref, test)
        assert report["num_frames"] == 3
        assert report["psnr_db"] > 10
        assert not report["psnr_is_infinite"]
        assert 0 < report["ssim"] <= 1

    def test_identical_marks_infinite(self):
        x = np.random.default_rng(11).random((2, 16, 16))
        report = sequence_report(x, x)
        assert report["psnr_is_infinite"] and report["psnr_db"] is None
