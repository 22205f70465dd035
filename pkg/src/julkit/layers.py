"""Minimal trainable layers shared by the networks in this package.

Each layer owns its parameter tensors and exposes ``parameters()`` for the
optimizer. Initialization draws from a caller-supplied numpy Generator so
every network is reproducible from its seed.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def _init(rng, shape, fan_in, zero=False):
    if zero:
        return Tensor(np.zeros(shape), requires_grad=True)
    std = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Linear:
    """Dense layer: y = x W + b with x shaped [batch, in]."""

    def __init__(self, n_in, n_out, rng, zero=False):
        self.weight = _init(rng, (n_in, n_out), n_in, zero=zero)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return x.matmul(self.weight).bias_add(self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class Conv2d:
    """Same-size conv (odd k, stride 1), optionally followed by 2x decimation.

    ``down=True`` keeps every second row/column after the convolution,
    which is how the strided encoder/discriminator stages are realized.
    """

    def __init__(self, c_in, c_out, k, rng, zero=False, down=False):
        self.weight = _init(rng, (c_out, c_in, k, k), c_in * k * k, zero=zero)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.down = down

    def __call__(self, x):
        y = x.conv2d(self.weight).bias_add(self.bias)
        if self.down:
            y = y.subsample2()
        return y

    def parameters(self):
        return [self.weight, self.bias]


def collect_parameters(*modules):
    """Flatten parameters() of the given layers/networks into one list."""
    out = []
    for m in modules:
        out.extend(m.parameters())
    return out
