"""
Tests for the mixers.

Covers mask geometry, area accounting and the mixed = mask*x_a + (1-mask)*x_b
convention of every variant.
"""

import math

import numpy as np
import pytest
import torch

from src.sumix.config.settings import MixConfig
from src.sumix.core.errors import InvalidParameterError, ShapeMismatchError
from src.sumix.core.mixers import (
    box_bounds, box_side, cutmix, fmix, fmix_mask, mix_batch, mix_pair, mixup_interpolate,
    resizemix, sample_lambda, saliency_map, saliency_peak, saliencymix,
)
from src.sumix.core.models import MixMethod


def _pair(n=4, c=3, h=16, w=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, c, h, w, generator=g), torch.rand(n, c, h, w, generator=g)


class TestSampleLambda:
    """Tests for Beta(alpha, alpha) draws."""

    def test_in_unit_interval(self, rng):
        values = [sample_lambda(0.2, rng) for _ in range(200)]
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_rejects_non_positive_alpha(self, rng):
        with pytest.raises(InvalidParameterError):
            sample_lambda(0.0, rng)
        with pytest.raises(InvalidParameterError):
            sample_lambda(-1.0, rng)

    def test_same_seed_same_draw(self):
        assert sample_lambda(1.0, np.random.default_rng(9)) == sample_lambda(1.0, np.random.default_rng(9))

    def test_uniform_mean(self):
        rng = np.random.default_rng(11)
        n = 100_000
        values = np.array([sample_lambda(1.0, rng) for _ in range(n)])
        # Beta(1, 1) is uniform: variance 1/12
        assert abs(values.mean() - 0.5) <= 3 * math.sqrt(1.0 / 12.0 / n)

    def test_small_alpha_variance(self):
        rng = np.random.default_rng(12)
        values = np.array([sample_lambda(0.2, rng) for _ in range(100_000)])
        expected = 1.0 / (4.0 * (2 * 0.2 + 1.0))
        assert expected == pytest.approx(0.1786, abs=1e-4)
        assert values.var() == pytest.approx(expected, rel=0.05)


class TestMixup:
    """Tests for plain interpolation."""

    def test_constant_parents(self):
        x_a = torch.full((1, 3, 4, 4), 0.2)
        x_b = torch.full((1, 3, 4, 4), 0.8)
        mixed = mixup_interpolate(x_a, x_b, 0.25).mixed
        assert torch.allclose(mixed, torch.full_like(mixed, 0.65))

    def test_boundaries_return_parents(self):
        x_a, x_b = _pair()
        assert torch.equal(mixup_interpolate(x_a, x_b, 1.0).mixed, x_a)
        assert torch.equal(mixup_interpolate(x_a, x_b, 0.0).mixed, x_b)

    def test_swap_symmetry_for_dyadic_lam(self):
        x_a, x_b = _pair()
        left = mixup_interpolate(x_a, x_b, 0.25).mixed
        right = mixup_interpolate(x_b, x_a, 0.75).mixed
        assert torch.allclose(left, right, atol=1e-6)

    def test_lam_nominal_is_lam(self):
        x_a, x_b = _pair()
        result = mixup_interpolate(x_a, x_b, 0.3)
        assert torch.all(result.lam_nominal == 0.3)
        assert result.lam_nominal.dtype == torch.float64

    def test_rejects_lam_outside_unit_interval(self):
        x_a, x_b = _pair()
        with pytest.raises(InvalidParameterError):
            mixup_interpolate(x_a, x_b, 1.5)

    def test_rejects_mismatched_shapes(self):
        x_a, _ = _pair()
        with pytest.raises(ShapeMismatchError):
            mixup_interpolate(x_a, x_a[:, :, :8], 0.5)


class TestCutMix:
    """Tests for rectangle pasting."""

    def test_box_side_rounds_half_up(self):
        assert box_side(32, 0.25) == 16
        assert box_side(10, 0.0) == 0
        assert box_side(10, 1.0) == 10
        assert box_side(31, 0.5) == 22

    def test_box_is_clipped_at_border(self):
        assert box_bounds(32, 32, 0.25, 0, 0) == (0, 8, 0, 8)
        assert box_bounds(32, 32, 0.25, 31, 31) == (23, 32, 23, 32)

    def test_centred_box_area(self, rng):
        x_a, x_b = _pair(n=1, h=32, w=32)
        result = cutmix(x_a, x_b, 0.25, rng, centers=np.array([[16, 16]]))
        assert int(result.mask.sum()) == 256
        assert result.lam_nominal.item() == 0.25

    def test_realized_area_equals_mask_mean(self, rng):
        x_a, x_b = _pair(n=8, h=15, w=17)
        for lam in rng.uniform(0, 1, size=25):
            result = cutmix(x_a, x_b, float(lam), rng)
            assert torch.equal(result.lam_nominal, result.mask.double().mean(dim=(1, 2)))

    def test_pixels_come_from_one_parent(self, rng):
        x_a, x_b = _pair()
        result = cutmix(x_a, x_b, 0.4, rng)
        inside = result.mask.bool().unsqueeze(1).expand_as(x_a)
        assert torch.equal(result.mixed[inside], x_a[inside])
        assert torch.equal(result.mixed[~inside], x_b[~inside])

    def test_zero_lambda_keeps_background(self, rng):
        x_a, x_b = _pair()
        result = cutmix(x_a, x_b, 0.0, rng)
        assert torch.equal(result.mixed, x_b)
        assert torch.all(result.lam_nominal == 0)

    def test_corner_centre_clips_area(self, rng):
        x_a, x_b = _pair(n=1, h=32, w=32)
        result = cutmix(x_a, x_b, 0.5, rng, centers=np.array([[1, 2]]))
        y1, y2, x1, x2 = box_bounds(32, 32, 0.5, 1, 2)
        assert result.lam_nominal.item() == (y2 - y1) * (x2 - x1) / 1024
        assert result.lam_nominal.item() < 0.5

    def test_ones_region_is_a_rectangle(self, rng):
        x_a, x_b = _pair(n=6)
        result = cutmix(x_a, x_b, 0.35, rng)
        for mask in result.mask:
            ones = mask.bool()
            rows, cols = ones.any(dim=1), ones.any(dim=0)
            assert torch.equal(ones, rows[:, None] & cols[None, :])


class TestResizeMix:
    """Tests for resize-and-paste."""

    def test_area_matches_brute_force(self, rng):
        x_a, x_b = _pair(n=3, h=20, w=12)
        for lam in (0.1, 0.37, 0.5, 0.9):
            result = resizemix(x_a, x_b, lam, rng)
            expected = box_side(20, lam) * box_side(12, lam)
            counts = result.mask.sum(dim=(1, 2))
            assert torch.all(counts == expected)
            assert torch.equal(result.lam_nominal, counts.double() / (20 * 12))

    def test_outside_paste_is_background(self, rng):
        x_a, x_b = _pair()
        result = resizemix(x_a, x_b, 0.3, rng)
        outside = ~result.mask.bool().unsqueeze(1).expand_as(x_a)
        assert torch.equal(result.mixed[outside], x_b[outside])

    def test_full_lambda_is_identity(self, rng):
        x_a, x_b = _pair()
        assert torch.equal(resizemix(x_a, x_b, 1.0, rng).mixed, x_a)

    def test_constant_patch_sum_is_area(self, rng):
        x_a = torch.ones(2, 1, 32, 32)
        x_b = torch.zeros(2, 1, 32, 32)
        result = resizemix(x_a, x_b, 0.25, rng)
        assert torch.allclose(result.mixed.sum(dim=(1, 2, 3)), torch.full((2,), 256.0))

    def test_zero_lambda_keeps_background(self, rng):
        x_a, x_b = _pair()
        result = resizemix(x_a, x_b, 0.0, rng)
        assert torch.equal(result.mixed, x_b)
        assert result.mask.sum() == 0


class TestFMix:
    """Tests for low-frequency masks."""

    def test_ones_count_is_ceil(self, rng):
        for lam in rng.uniform(0, 1, size=100):
            mask = fmix_mask(13, 11, float(lam), 3.0, rng)
            assert int(mask.sum()) == math.ceil(float(lam) * 13 * 11)

    def test_published_count(self, rng):
        assert int(fmix_mask(32, 32, 0.3, 3.0, rng).sum()) == 308

    def test_mask_is_binary(self, rng):
        mask = fmix_mask(16, 16, 0.4, 3.0, rng, count=3)
        assert mask.shape == (3, 16, 16)
        assert set(mask.unique().tolist()) <= {0.0, 1.0}

    def test_boundaries(self, rng):
        assert fmix_mask(8, 8, 0.0, 3.0, rng).sum() == 0
        assert fmix_mask(8, 8, 1.0, 3.0, rng).sum() == 64

    def test_rejects_non_positive_decay(self, rng):
        with pytest.raises(InvalidParameterError):
            fmix_mask(8, 8, 0.5, 0.0, rng)

    def test_deterministic_given_seed(self):
        first = fmix_mask(16, 16, 0.5, 3.0, np.random.default_rng(2))
        second = fmix_mask(16, 16, 0.5, 3.0, np.random.default_rng(2))
        assert torch.equal(first, second)

    def test_mixed_follows_mask(self, rng):
        x_a, x_b = _pair()
        result = fmix(x_a, x_b, 0.6, rng)
        inside = result.mask.bool().unsqueeze(1).expand_as(x_a)
        assert torch.equal(result.mixed[inside], x_a[inside])
        assert torch.equal(result.mixed[~inside], x_b[~inside])


class TestSaliencyMix:
    """Tests for saliency-centred pasting."""

    def test_constant_image_has_zero_saliency(self):
        assert np.all(saliency_map(torch.full((3, 8, 8), 0.5)) == 0)

    def test_map_is_normalized(self):
        x_a, _ = _pair(n=1)
        saliency = saliency_map(x_a[0])
        assert saliency.min() == 0.0
        assert saliency.max() == pytest.approx(1.0)

    def test_peak_follows_single_bright_pixel(self):
        image = torch.zeros(3, 16, 16)
        image[:, 5, 9] = 1.0
        row, col = saliency_peak(image)
        assert abs(row - 5) <= 3 and abs(col - 9) <= 3

    def test_zero_lambda_keeps_background(self):
        x_a, x_b = _pair()
        assert torch.equal(saliencymix(x_a, x_b, 0.0).mixed, x_b)

    def test_area_matches_brute_force(self, rng):
        x_a, x_b = _pair(n=3, h=16, w=16)
        result = saliencymix(x_a, x_b, 0.3)
        for i in range(3):
            y1, y2, x1, x2 = box_bounds(16, 16, 0.3, *saliency_peak(x_a[i]))
            assert int(result.mask[i].sum()) == (y2 - y1) * (x2 - x1)
        assert torch.equal(result.lam_nominal, result.mask.double().mean(dim=(1, 2)))


class TestMixBatch:
    """Tests for in-batch pairing."""

    @pytest.mark.parametrize("method", [m.value for m in MixMethod])
    def test_every_method_is_reproducible(self, method):
        images, _ = _pair(n=6)
        config = MixConfig(method=method, alpha=1.0)
        first = mix_batch(images, config, np.random.default_rng(4))
        second = mix_batch(images, config, np.random.default_rng(4))
        assert torch.equal(first.perm, second.perm)
        assert torch.equal(first.mixed, second.mixed)
        assert first.method is MixMethod(method)

    def test_perm_is_a_permutation(self, rng):
        images, _ = _pair(n=10)
        result = mix_batch(images, MixConfig(method="cutmix", alpha=1.0), rng)
        assert sorted(result.perm.tolist()) == list(range(10))

    def test_partner_is_permuted_batch(self, rng):
        images, _ = _pair(n=5)
        result = mix_batch(images, MixConfig(method="mixup"), rng, lam=0.0)
        assert torch.equal(result.mixed, images[result.perm])

    def test_mix_pair_dispatch(self, rng):
        x_a, x_b = _pair()
        result = mix_pair(x_a, x_b, MixConfig(method="resizemix"), 0.5, rng)
        assert result.method is MixMethod.RESIZEMIX
        assert torch.equal(result.perm, torch.arange(4))
