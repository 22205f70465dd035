"""Tests for per-channel affine deformation.

The geometric oracles here are index arithmetic on the raw arrays:
identity must be bit-exact, a half-turn on an odd grid is a pure flip,
and a one-pixel translation is a column shift. Gradients are checked
against finite differences at a smooth operating point.
"""

import math

import numpy as np
import pytest

from julkit.adaat import AffineParams, adaat_apply, adaat_grid, squash_params
from julkit.autodiff import Tensor, gradcheck
from julkit.errors import ShapeError


def params_for(c, scale=1.0, rotation=0.0, tx=0.0, ty=0.0, requires_grad=False):
    def vec(v):
        return Tensor(np.full(c, float(v)), requires_grad=requires_grad)

    return AffineParams(scale=vec(scale), rotation=vec(rotation),
                        tx=vec(tx), ty=vec(ty))


class TestSquash:
    def test_zero_raw_is_identity_transform(self):
        p = squash_params(Tensor(np.zeros((3, 4))))
        np.testing.assert_array_equal(p.scale.data, np.ones(3))
        np.testing.assert_array_equal(p.rotation.data, np.zeros(3))
        np.testing.assert_array_equal(p.tx.data, np.zeros(3))
        np.testing.assert_array_equal(p.ty.data, np.zeros(3))

    def test_ranges(self):
        raw = np.random.default_rng(0).normal(0.0, 5.0, size=(6, 4))
        p = squash_params(Tensor(raw))
        assert np.all(p.scale.data > 0) and np.all(p.scale.data < 2)
        assert np.all(np.abs(p.rotation.data) <= math.pi)
        assert np.all(np.abs(p.tx.data) < 1) and np.all(np.abs(p.ty.data) < 1)

    def test_batched_raw_keeps_batch_axis(self):
        p = squash_params(Tensor(np.zeros((2, 3, 4))))
        assert p.scale.shape == (2, 3)
        assert p.channels == 3

    def test_bad_trailing_axis_rejected(self):
        with pytest.raises(ShapeError):
            squash_params(Tensor(np.zeros((3, 5))))


class TestGeometricOracles:
    def test_identity_is_bit_exact(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(4, 9, 9))
        out = adaat_apply(Tensor(x), params_for(4))
        assert np.array_equal(out.data, x)

    def test_identity_is_bit_exact_even_grid(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(2, 8, 10))
        out = adaat_apply(Tensor(x), params_for(2))
        assert np.array_equal(out.data, x)

    def test_half_turn_on_odd_grid_is_exact_flip(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(3, 9, 7))
        out = adaat_apply(Tensor(x), params_for(3, rotation=math.pi))
        np.testing.assert_allclose(out.data, x[:, ::-1, ::-1], atol=1e-12)

    def test_one_pixel_translation_is_index_shift(self):
        rng = np.random.default_rng(4)
        h = w = 9
        x = rng.uniform(size=(2, h, w))
        # tx of one pixel in normalized units: output column j reads
        # source column j+1, so the last column reads outside (zero)
        out = adaat_apply(Tensor(x), params_for(2, tx=2.0 / (w - 1)))
        np.testing.assert_allclose(out.data[:, :, :-1], x[:, :, 1:], atol=1e-12)
        np.testing.assert_allclose(out.data[:, :, -1], 0.0, atol=1e-12)

    def test_one_pixel_vertical_translation(self):
        rng = np.random.default_rng(5)
        h = w = 7
        x = rng.uniform(size=(1, h, w))
        out = adaat_apply(Tensor(x), params_for(1, ty=2.0 / (h - 1)))
        np.testing.assert_allclose(out.data[:, :-1, :], x[:, 1:, :], atol=1e-12)
        np.testing.assert_allclose(out.data[:, -1, :], 0.0, atol=1e-12)

    def test_rotation_round_trip_recovers_interior(self):
        # rotate a smooth map by r, then by -r; interpolation blurs, so
        # compare the interior under a loose cap
        h = w = 17
        ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w),
                             indexing="ij")
        x = (0.5 + 0.4 * np.sin(2.0 * xs) * np.cos(1.5 * ys))[None]
        r = 0.35
        once = adaat_apply(Tensor(x), params_for(1, rotation=r))
        back = adaat_apply(once, params_for(1, rotation=-r))
        interior = (slice(None), slice(4, -4), slice(4, -4))
        err = np.max(np.abs(back.data[interior] - x[interior]))
        assert err <= 0.05

    def test_scale_two_reads_every_other_pixel(self):
        # S=2 maps output pixel (i,j) of a 5x5 grid to source (2i-2, 2j-2)
        x = np.arange(25, dtype=np.float64).reshape(1, 5, 5)
        out = adaat_apply(Tensor(x), params_for(1, scale=2.0))
        assert out.data[0, 2, 2] == x[0, 2, 2]
        assert out.data[0, 1, 1] == x[0, 0, 0]
        assert out.data[0, 1, 2] == x[0, 0, 2]
        # corners read outside the source and come back zero
        assert out.data[0, 0, 0] == 0.0

    def test_channels_deform_independently(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(2, 9, 9))
        p = AffineParams(scale=Tensor([1.0, 1.0]),
                         rotation=Tensor([0.0, math.pi]),
                         tx=Tensor([0.0, 0.0]), ty=Tensor([0.0, 0.0]))
        out = adaat_apply(Tensor(x), p)
        assert np.array_equal(out.data[0], x[0])
        np.testing.assert_allclose(out.data[1], x[1, ::-1, ::-1], atol=1e-12)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(2, 3, 8, 8))
        raw = rng.normal(0.0, 0.4, size=(2, 3, 4))
        batched = adaat_apply(Tensor(x), squash_params(Tensor(raw)))
        for n in range(2):
            single = adaat_apply(Tensor(x[n]), squash_params(Tensor(raw[n])))
            np.testing.assert_allclose(batched.data[n], single.data, rtol=1e-12)


class TestGrid:
    def test_identity_grid_spans_unit_square(self):
        grid = adaat_grid(params_for(1), 5, 5)
        assert grid.shape == (1, 5, 5, 2)
        np.testing.assert_allclose(grid.data[0, 0, 0], [-1.0, -1.0])
        np.testing.assert_allclose(grid.data[0, -1, -1], [1.0, 1.0])
        np.testing.assert_allclose(grid.data[0, 2, 2], [0.0, 0.0])

    def test_translation_offsets_grid(self):
        grid = adaat_grid(params_for(1, tx=0.25, ty=-0.5), 3, 3)
        np.testing.assert_allclose(grid.data[0, 1, 1], [0.25, -0.5])

    def test_batch_mismatch_rejected(self):
        p = squash_params(Tensor(np.zeros((2, 3, 4))))
        with pytest.raises(ShapeError):
            adaat_grid(p, 4, 4, batch=3)


class TestShapeDiscipline:
    def test_channel_count_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            adaat_apply(Tensor(np.zeros((3, 4, 4))), params_for(2))

    def test_batched_features_need_batched_params(self):
        with pytest.raises(ShapeError):
            adaat_apply(Tensor(np.zeros((2, 3, 4, 4))), params_for(3))

    def test_rank_5_rejected(self):
        with pytest.raises(ShapeError):
            adaat_apply(Tensor(np.zeros((1, 2, 3, 4, 4))), params_for(2))


class TestGradients:
    def test_gradcheck_through_squash_and_warp(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.uniform(0.2, 0.8, size=(2, 8, 8)), requires_grad=True)
        # arctanh(0.2) translation puts every sample on half-integer pixel
        # coordinates, away from the bilinear kinks at whole pixels
        raw = np.zeros((2, 4))
        raw[:, 2:] = np.arctanh(0.2)
        raw += rng.uniform(-0.02, 0.02, size=raw.shape)
        rt = Tensor(raw, requires_grad=True)

        def fn(features, raw_params):
            return adaat_apply(features, squash_params(raw_params)).square().sum()

        assert gradcheck(fn, [x, rt]) < 1e-4

    def test_gradient_flows_to_all_four_parameters(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.uniform(size=(1, 6, 6)))
        raw = Tensor(np.full((1, 4), 0.1), requires_grad=True)
        adaat_apply(x, squash_params(raw)).square().sum().backward()
        assert raw.grad is not None
        assert np.all(np.isfinite(raw.grad))
        assert np.count_nonzero(raw.grad) == 4
