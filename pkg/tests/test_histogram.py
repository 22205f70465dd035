"""Tests for the soft histogram and the distribution-matching loss.

The scalar oracle recomputes the double-exponential soft assignment by
hand for a tiny value set. Property tests pin the loss invariants: mass
sums to one, KL is non-negative, zero at equality, and grows as the
compared values are scaled away from the reference.
"""

import numpy as np
import pytest

from julkit.autodiff import Tensor, gradcheck
from julkit.errors import ConfigError, ShapeError
from julkit.histogram import (Histogram, HistogramSpec, bin_centers,
                              loss_un2, soft_histogram, soft_weights)
from julkit.uncertainty import ErrorMap


def hand_histogram(values, centers, scale, bandwidth=None):
    """Straight-line reimplementation used as the oracle."""
    values = np.asarray(values, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if bandwidth is None:
        span = centers[-1] - centers[0]
        bandwidth = 2.0 * span * span
    mass = np.zeros(len(centers))
    for v in values:
        w = scale * np.exp(-((centers - v) ** 2) / bandwidth)
        e = np.exp(w)
        mass += e / e.sum()
    return mass / len(values)


class TestSpecValidation:
    def test_defaults_accepted(self):
        spec = HistogramSpec()
        assert spec.bin_count == 11
        assert spec.kernel_bandwidth is None

    @pytest.mark.parametrize("kwargs", [
        {"bin_count": 1},
        {"alpha_max": 0.0},
        {"spacing": "cubic"},
        {"kernel_scale": -1.0},
        {"kernel_bandwidth": 0.0},
    ])
    def test_bad_fields_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            HistogramSpec(**kwargs)


class TestBinCenters:
    def test_linear_span_mean_to_alpha_std(self):
        vals = np.array([0.1, 0.2, 0.3, 0.4])
        spec = HistogramSpec(bin_count=5, alpha_max=2.0)
        c = bin_centers(Tensor(vals), spec).data
        np.testing.assert_allclose(c[0], vals.mean())
        np.testing.assert_allclose(c[-1], vals.mean() + 2.0 * vals.std())
        np.testing.assert_allclose(np.diff(c), np.full(4, np.diff(c)[0]))

    def test_logarithmic_offsets_are_decades(self):
        vals = np.array([0.0, 1.0])
        spec = HistogramSpec(bin_count=4, alpha_max=2.0, spacing="logarithmic")
        c = bin_centers(Tensor(vals), spec).data
        span = 2.0 * vals.std()
        np.testing.assert_allclose(c - c[0], [0.0, span / 100, span / 10, span])

    def test_constant_values_use_std_floor(self):
        c = bin_centers(Tensor(np.full(10, 0.3)), HistogramSpec()).data
        assert np.all(np.isfinite(c))
        assert np.all(np.diff(c) > 0)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            bin_centers(Tensor(np.zeros(0)), HistogramSpec())

    def test_centers_carry_no_gradient(self):
        v = Tensor(np.array([0.1, 0.5]), requires_grad=True)
        assert not bin_centers(v, HistogramSpec()).requires_grad


class TestSoftHistogram:
    def test_matches_hand_oracle(self):
        vals = np.array([0.05, 0.2, 0.2, 0.7])
        spec = HistogramSpec(bin_count=6)
        centers = bin_centers(Tensor(vals), spec)
        hist = soft_histogram(Tensor(vals), centers, spec)
        np.testing.assert_allclose(
            hist.mass.data,
            hand_histogram(vals, centers.data, spec.kernel_scale),
            rtol=1e-12)

    def test_explicit_bandwidth_matches_oracle(self):
        vals = np.array([0.1, 0.4, 0.9])
        spec = HistogramSpec(bin_count=4, kernel_scale=5.0, kernel_bandwidth=0.3)
        centers = bin_centers(Tensor(vals), spec)
        hist = soft_histogram(Tensor(vals), centers, spec)
        np.testing.assert_allclose(
            hist.mass.data,
            hand_histogram(vals, centers.data, 5.0, bandwidth=0.3),
            rtol=1e-12)

    def test_mass_sums_to_one(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            vals = rng.uniform(0.0, 1.0, size=rng.integers(2, 200))
            spec = HistogramSpec()
            hist = soft_histogram(Tensor(vals), bin_centers(Tensor(vals), spec), spec)
            np.testing.assert_allclose(hist.mass.data.sum(), 1.0, atol=1e-12)

    def test_mass_concentrates_near_values(self):
        # all values at the first center: the first bin must hold the
        # largest share
        vals = np.full(50, 0.2)
        spec = HistogramSpec(bin_count=5)
        centers = Tensor(np.linspace(0.2, 0.8, 5))
        hist = soft_histogram(Tensor(vals), centers, spec)
        assert hist.mass.data[0] == hist.mass.data.max()

    def test_accepts_error_map_and_2d_values(self):
        vals = np.random.default_rng(22).uniform(size=(4, 4))
        spec = HistogramSpec()
        centers = bin_centers(Tensor(vals.ravel()), spec)
        a = soft_histogram(ErrorMap(values=Tensor(vals)), centers, spec)
        b = soft_histogram(Tensor(vals.ravel()), centers, spec)
        np.testing.assert_allclose(a.mass.data, b.mass.data)

    def test_differentiable_in_values(self):
        rng = np.random.default_rng(23)
        vals = Tensor(rng.uniform(0.1, 0.9, size=12), requires_grad=True)
        spec = HistogramSpec(bin_count=5)
        centers = Tensor(np.linspace(0.1, 0.9, 5))

        def fn(v):
            return (soft_histogram(v, centers, spec).mass
                    * Tensor(np.linspace(0.0, 1.0, 5))).sum()

        assert gradcheck(fn, [vals]) < 1e-6

    def test_weights_shape(self):
        spec = HistogramSpec(bin_count=7)
        w = soft_weights(Tensor(np.zeros(5)), Tensor(np.linspace(0, 1, 7)), spec)
        assert w.shape == (5, 7)


class TestLossUn2:
    SPEC = HistogramSpec()

    def test_zero_when_distributions_match(self):
        vals = np.random.default_rng(24).uniform(0.1, 0.5, size=64)
        loss = loss_un2(Tensor(vals), Tensor(vals.copy()), self.SPEC)
        assert abs(loss.data) < 1e-9

    def test_non_negative_on_random_inputs(self):
        rng = np.random.default_rng(25)
        for _ in range(100):
            n = int(rng.integers(4, 128))
            eps = rng.uniform(0.0, 1.0, size=n)
            sig = rng.uniform(0.0, 1.0, size=n)
            loss = loss_un2(Tensor(eps), Tensor(sig), self.SPEC)
            assert loss.data >= -1e-9

    def test_monotone_under_scale_mismatch(self):
        rng = np.random.default_rng(26)
        eps = rng.uniform(0.05, 0.4, size=100)
        losses = [loss_un2(Tensor(eps), Tensor(c * eps), self.SPEC).data
                  for c in (1.0, 1.5, 2.0, 3.0)]
        assert losses[0] < losses[1] < losses[2] < losses[3]

    def test_gradient_reaches_sigma_only(self):
        rng = np.random.default_rng(27)
        eps = Tensor(rng.uniform(0.1, 0.4, size=32), requires_grad=True)
        sig = Tensor(rng.uniform(0.1, 0.4, size=32), requires_grad=True)
        loss_un2(eps, sig, self.SPEC).backward()
        assert eps.grad is None
        assert sig.grad is not None and np.any(sig.grad != 0)

    def test_gradcheck_in_sigma(self):
        rng = np.random.default_rng(28)
        eps = Tensor(rng.uniform(0.1, 0.5, size=16))
        sig = Tensor(rng.uniform(0.1, 0.5, size=16), requires_grad=True)
        assert gradcheck(lambda s: loss_un2(eps, s, self.SPEC), [sig]) < 1e-6

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            loss_un2(Tensor(np.ones(8)), Tensor(np.ones(9)), self.SPEC)

    def test_accepts_error_map_with_2d_sigma(self):
        rng = np.random.default_rng(29)
        vals = rng.uniform(0.05, 0.3, size=(6, 6))
        em = ErrorMap(values=Tensor(vals))
        loss = loss_un2(em, Tensor(vals * 1.5), self.SPEC)
        assert loss.data > 0

    def test_logarithmic_spacing_still_matches_at_equality(self):
        spec = HistogramSpec(spacing="logarithmic")
        vals = np.random.default_rng(30).uniform(0.1, 0.6, size=48)
        loss = loss_un2(Tensor(vals), Tensor(vals.copy()), spec)
        assert abs(loss.data) < 1e-9
