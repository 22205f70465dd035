"""Cross-lane agreement tests for the hot kernels.

The compiled extension and the numpy fallback must implement the same
contracts: stride-1 same-size convolution with zero padding and bilinear
grid sampling with zero reads outside the image. Summation order differs
between lanes, so agreement is to rounding error rather than bitwise,
except where the snap-to-integer rule guarantees exactness.
"""

import numpy as np
import pytest

from julkit import _kernels
from julkit._kernels import numpy_backend

fast = pytest.importorskip(
    "julkit._kernels._fast", reason="compiled kernel lane not built")


def rand_conv_case(rng, n=2, ci=3, co=4, h=9, w=7, k=3):
    x = rng.normal(size=(n, ci, h, w))
    wts = rng.normal(size=(co, ci, k, k))
    gy = rng.normal(size=(n, co, h, w))
    return np.ascontiguousarray(x), np.ascontiguousarray(wts), np.ascontiguousarray(gy)


def rand_grid(rng, n, g, h, w):
    return np.ascontiguousarray(rng.uniform(-1.2, 1.2, size=(n, g, h, w, 2)))


class TestBackendSelection:
    def test_active_backend_is_named(self):
        assert _kernels.BACKEND_NAME in ("fast", "numpy")

    def test_snap_eps_shared(self):
        assert _kernels.SNAP_EPS == numpy_backend.SNAP_EPS


class TestConvLaneAgreement:
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_forward(self, k):
        rng = np.random.default_rng(10 + k)
        x, w, _ = rand_conv_case(rng, k=k)
        np.testing.assert_allclose(fast.conv2d_forward(x, w),
                                   numpy_backend.conv2d_forward(x, w),
                                   rtol=1e-12, atol=1e-12)

    def test_grad_input(self):
        rng = np.random.default_rng(20)
        _, w, gy = rand_conv_case(rng)
        np.testing.assert_allclose(fast.conv2d_grad_input(gy, w),
                                   numpy_backend.conv2d_grad_input(gy, w),
                                   rtol=1e-12, atol=1e-12)

    def test_grad_weight(self):
        rng = np.random.default_rng(30)
        x, _, gy = rand_conv_case(rng)
        np.testing.assert_allclose(fast.conv2d_grad_weight(x, gy, 3),
                                   numpy_backend.conv2d_grad_weight(x, gy, 3),
                                   rtol=1e-12, atol=1e-12)


class TestBilinearLaneAgreement:
    def test_forward(self):
        rng = np.random.default_rng(40)
        x = np.ascontiguousarray(rng.normal(size=(2, 3, 8, 6)))
        grid = rand_grid(rng, 2, 1, 5, 5)
        np.testing.assert_allclose(fast.bilinear_forward(x, grid),
                                   numpy_backend.bilinear_forward(x, grid),
                                   rtol=1e-12, atol=1e-12)

    def test_forward_per_channel_grids(self):
        rng = np.random.default_rng(41)
        x = np.ascontiguousarray(rng.normal(size=(1, 4, 6, 6)))
        grid = rand_grid(rng, 1, 4, 6, 6)
        np.testing.assert_allclose(fast.bilinear_forward(x, grid),
                                   numpy_backend.bilinear_forward(x, grid),
                                   rtol=1e-12, atol=1e-12)

    def test_backward(self):
        rng = np.random.default_rng(42)
        x = np.ascontiguousarray(rng.normal(size=(2, 3, 7, 5)))
        grid = rand_grid(rng, 2, 1, 4, 6)
        gy = np.ascontiguousarray(rng.normal(size=(2, 3, 4, 6)))
        gx_f, gg_f = fast.bilinear_backward(x, grid, gy)
        gx_n, gg_n = numpy_backend.bilinear_backward(x, grid, gy)
        np.testing.assert_allclose(gx_f, gx_n, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(gg_f, gg_n, rtol=1e-12, atol=1e-12)


class TestSnapRule:
    def identity_grid(self, h, w):
        ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w),
                             indexing="ij")
        return np.ascontiguousarray(
            np.stack([xs, ys], axis=-1)[None, None])

    @pytest.mark.parametrize("lane", ["fast", "numpy"])
    def test_identity_grid_is_bit_exact(self, lane):
        impl = fast if lane == "fast" else numpy_backend
        rng = np.random.default_rng(50)
        x = np.ascontiguousarray(rng.uniform(size=(1, 3, 9, 9)))
        out = impl.bilinear_forward(x, self.identity_grid(9, 9))
        assert np.array_equal(out, x)

    @pytest.mark.parametrize("lane", ["fast", "numpy"])
    def test_near_integer_coordinates_snap(self, lane):
        # linspace arithmetic may land 1e-12 off a pixel center; the snap
        # rule must treat that as the exact pixel
        impl = fast if lane == "fast" else numpy_backend
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 2, 3] = 1.0
        grid = np.zeros((1, 1, 1, 1, 2))
        grid[..., 0] = 0.5 + 1e-12
        grid[..., 1] = 0.0 - 1e-12
        out = impl.bilinear_forward(np.ascontiguousarray(x),
                                    np.ascontiguousarray(grid))
        assert out[0, 0, 0, 0] == 1.0
