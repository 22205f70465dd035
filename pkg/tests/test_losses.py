"""Tests for the adversarial, perceptual, and alignment objectives."""

import numpy as np
import pytest

from julkit.autodiff import Tensor, gradcheck
from julkit.errors import ConfigError, NumericsError, ShapeError
from julkit.losses import (FeatureExtractor, LossWeights, cosine_similarity,
                           lsgan_discriminator_loss, lsgan_generator_loss,
                           perception_loss, sync_loss, sync_score, total_loss)
from julkit.models import SyncNet, mouth_crop


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.w_un, w.w_ad, w.w_pe, w.w_sync) == (1.0, 1.0, 10.0, 0.1)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(w_pe=-1.0)


class TestLsgan:
    def test_generator_wants_scores_at_one(self):
        np.testing.assert_allclose(
            lsgan_generator_loss(Tensor([1.0, 1.0])).data, 0.0)
        np.testing.assert_allclose(
            lsgan_generator_loss(Tensor([0.0, 2.0])).data, 1.0)

    def test_discriminator_separates_real_and_fake(self):
        # perfect critic: real at 1, fake at 0
        loss = lsgan_discriminator_loss(Tensor([1.0]), Tensor([0.0]))
        np.testing.assert_allclose(loss.data, 0.0)
        # confused critic pays on both halves
        loss = lsgan_discriminator_loss(Tensor([0.0]), Tensor([1.0]))
        np.testing.assert_allclose(loss.data, 1.0)

    def test_hand_formula(self):
        real = np.array([0.8, 1.2])
        fake = np.array([0.1, -0.3])
        loss = lsgan_discriminator_loss(Tensor(real), Tensor(fake))
        expect = 0.5 * (np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))
        np.testing.assert_allclose(loss.data, expect, rtol=1e-12)

    def test_gradcheck(self):
        d = Tensor(np.array([0.3, 0.7, 1.4]), requires_grad=True)
        assert gradcheck(lambda t: lsgan_generator_loss(t), [d]) < 1e-6


class TestFeatureExtractor:
    def test_seed_reproducible_and_frozen(self):
        a = FeatureExtractor(3)
        b = FeatureExtractor(3)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weight.data, lb.weight.data)
            assert not la.weight.requires_grad
            assert not la.bias.requires_grad

    def test_taps_shapes_halve(self):
        fx = FeatureExtractor(0)
        feats = fx.features(Tensor(np.zeros((2, 3, 32, 32))))
        assert [f.shape for f in feats] == [(2, 8, 16, 16), (2, 16, 8, 8),
                                            (2, 32, 4, 4)]

    def test_partial_taps(self):
        fx = FeatureExtractor(0, taps=(2,))
        feats = fx.features(Tensor(np.zeros((1, 3, 16, 16))))
        assert len(feats) == 1
        assert feats[0].shape == (1, 32, 2, 2)


class TestPerceptionLoss:
    def test_zero_at_equality(self):
        fx = FeatureExtractor(1)
        img = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 16, 16)))
        np.testing.assert_allclose(perception_loss(img, img, fx).data, 0.0,
                                   atol=1e-12)

    def test_positive_for_different_images(self):
        fx = FeatureExtractor(1)
        rng = np.random.default_rng(1)
        a = Tensor(rng.uniform(size=(1, 3, 16, 16)))
        b = Tensor(rng.uniform(size=(1, 3, 16, 16)))
        assert perception_loss(a, b, fx).data > 0

    def test_target_side_carries_no_gradient(self):
        fx = FeatureExtractor(2)
        rng = np.random.default_rng(2)
        gen = Tensor(rng.uniform(size=(1, 3, 16, 16)), requires_grad=True)
        gt = Tensor(rng.uniform(size=(1, 3, 16, 16)), requires_grad=True)
        perception_loss(gen, gt, fx).backward()
        assert gen.grad is not None and np.any(gen.grad != 0)
        assert gt.grad is None

    def test_shape_mismatch_rejected(self):
        fx = FeatureExtractor(0)
        with pytest.raises(ShapeError):
            perception_loss(Tensor(np.zeros((1, 3, 16, 16))),
                            Tensor(np.zeros((1, 3, 8, 8))), fx)


class TestCosineSimilarity:
    def test_parallel_and_orthogonal(self):
        a = Tensor([1.0, 0.0])
        np.testing.assert_allclose(cosine_similarity(a, Tensor([2.0, 0.0])).data, 1.0)
        np.testing.assert_allclose(cosine_similarity(a, Tensor([0.0, 3.0])).data,
                                   0.0, atol=1e-12)
        np.testing.assert_allclose(cosine_similarity(a, Tensor([-1.0, 0.0])).data,
                                   -1.0)

    def test_batched_rows(self):
        a = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
        b = Tensor(np.array([[1.0, 0.0], [0.0, -1.0]]))
        np.testing.assert_allclose(cosine_similarity(a, b).data, [1.0, -1.0])

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        assert gradcheck(lambda x, y: cosine_similarity(x, y).sum(), [a, b]) < 1e-6


class TestSyncScore:
    def make_net(self):
        return SyncNet(np.random.default_rng(0))

    def test_range_and_shapes(self):
        net = self.make_net()
        rng = np.random.default_rng(1)
        win = Tensor(rng.uniform(0.1, 0.9, size=(4, 9)))
        crop = Tensor(rng.uniform(size=(4, 3, 16, 32)))
        score = sync_score(net, win, crop)
        assert score.shape == (4,)
        assert np.all(score.data >= 0.0) and np.all(score.data <= 1.0)

    def test_single_pair_gives_scalar(self):
        net = self.make_net()
        rng = np.random.default_rng(2)
        score = sync_score(net, Tensor(rng.uniform(0.1, 0.9, size=9)),
                           Tensor(rng.uniform(size=(3, 16, 32))))
        assert score.shape == ()

    def test_window_length_validated(self):
        net = self.make_net()
        with pytest.raises(ShapeError):
            sync_score(net, Tensor(np.zeros((2, 7))),
                       Tensor(np.zeros((2, 3, 16, 32))))

    def test_mouth_crop_takes_lower_half(self):
        img = np.zeros((3, 32, 32))
        img[:, 16:, :] = 1.0
        out = mouth_crop(Tensor(img))
        assert out.shape == (3, 16, 32)
        np.testing.assert_allclose(out.data, 1.0)
        batch = mouth_crop(Tensor(np.zeros((2, 3, 32, 32))))
        assert batch.shape == (2, 3, 16, 32)


class TestSyncLoss:
    def test_zero_at_perfect_alignment(self):
        np.testing.assert_allclose(sync_loss(Tensor([1.0, 1.0])).data, 0.0)

    def test_quadratic_away_from_one(self):
        np.testing.assert_allclose(sync_loss(Tensor([0.5, 0.0])).data,
                                   (0.25 + 1.0) / 2.0)


class TestTotalLoss:
    def parts(self, un=0.1, ad=0.2, pe=0.3, sync=0.4):
        return {"un": Tensor(un), "ad_g": Tensor(ad), "pe": Tensor(pe),
                "sync": Tensor(sync)}

    def test_weighted_sum(self):
        w = LossWeights(w_un=1.0, w_ad=2.0, w_pe=3.0, w_sync=4.0)
        out = total_loss(self.parts(), w)
        np.testing.assert_allclose(out.data,
                                   0.1 + 2 * 0.2 + 3 * 0.3 + 4 * 0.4, rtol=1e-12)

    def test_missing_part_rejected(self):
        parts = self.parts()
        del parts["pe"]
        with pytest.raises(ConfigError):
            total_loss(parts, LossWeights())

    def test_non_finite_part_named(self):
        parts = self.parts()
        parts["sync"] = Tensor(np.nan)
        with pytest.raises(NumericsError, match="sync"):
            total_loss(parts, LossWeights())

    def test_gradient_scales_with_weight(self):
        un = Tensor(0.5, requires_grad=True)
        parts = {"un": un, "ad_g": Tensor(0.0), "pe": Tensor(0.0),
                 "sync": Tensor(0.0)}
        total_loss(parts, LossWeights(w_un=2.5)).backward()
        np.testing.assert_allclose(un.grad, 2.5)
