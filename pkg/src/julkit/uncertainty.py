"""Aleatoric-uncertainty estimation for generated images.

The true per-pixel error of a generated image is modeled as Laplacian
with predicted scale sigma = exp(tau). A small per-pixel network (1x1
convolutions over the generated image concatenated with the masked
source) emits both a predicted error map and the log-uncertainty map,
and the joint loss

    L_un1 = (1/n) sum_i eps_i / exp(tau_i) + (1/n) sum_i tau_i

ties uncertainty to the actual residuals: for fixed eps the per-pixel
minimum sits exactly at tau = log(eps).
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, concat
from .errors import ShapeError
from .layers import Conv2d, collect_parameters

TAU_MIN = -8.0
TAU_MAX = 8.0


@dataclass
class ErrorMap:
    """Non-negative per-pixel L1 error, channel-averaged: [H,W] or [N,H,W]."""

    values: Tensor


@dataclass
class UncertaintyOutput:
    """Predicted error map and log-uncertainty map, both image-shaped."""

    predicted_error: Tensor
    log_uncertainty: Tensor


def error_map(generated, truth):
    """Channel-mean absolute error per pixel, differentiable in both inputs."""
    generated = Tensor._coerce(generated)
    truth = Tensor._coerce(truth)
    if generated.shape != truth.shape:
        raise ShapeError(
            f"error_map shapes differ: {generated.shape} vs {truth.shape}"
        )
    if generated.ndim == 3:
        axis = 0
    elif generated.ndim == 4:
        axis = 1
    else:
        raise ShapeError("error_map expects rank-3 or rank-4 images")
    return ErrorMap(values=(generated - truth).abs().mean(axis=axis))


class UncertaintyNet:
    """Per-pixel MLP realized with 1x1 convolutions.

    Input is the channel concatenation of (generated, source); two heads
    emit the raw predicted-error and log-uncertainty maps. Both heads are
    zero-initialized, so at initialization eps_hat = softplus(0) = ln 2
    and tau = 0 everywhere.
    """

    def __init__(self, in_channels, rng, hidden=16):
        self.in_channels = in_channels
        self.c1 = Conv2d(in_channels, hidden, 1, rng)
        self.c2 = Conv2d(hidden, hidden, 1, rng)
        self.err_head = Conv2d(hidden, 1, 1, rng, zero=True)
        self.tau_head = Conv2d(hidden, 1, 1, rng, zero=True)

    def __call__(self, x):
        h = self.c1(x).tanh()
        h = self.c2(h).tanh()
        return self.err_head(h), self.tau_head(h)

    def parameters(self):
        return collect_parameters(self.c1, self.c2, self.err_head, self.tau_head)


def uncert_forward(f_theta, generated, source):
    """Run the uncertainty network on (generated, source).

    Returns softplus-activated predicted error (non-negative) and the
    log-uncertainty clamped to [-8, 8]; maps are [H,W] or [N,H,W].
    """
    generated = Tensor._coerce(generated)
    source = Tensor._coerce(source)
    if generated.shape != source.shape:
        raise ShapeError("generated and source shapes differ")
    if generated.ndim == 3:
        axis, squeeze = 0, (lambda t: t[0])
    elif generated.ndim == 4:
        axis, squeeze = 1, (lambda t: t[:, 0])
    else:
        raise ShapeError("uncert_forward expects rank-3 or rank-4 images")
    x = concat([generated, source], axis=axis)
    if x.shape[axis] != f_theta.in_channels:
        raise ShapeError(
            f"network expects {f_theta.in_channels} input channels, "
            f"got {x.shape[axis]}"
        )
    raw_err, raw_tau = f_theta(x)
    return UncertaintyOutput(
        predicted_error=squeeze(raw_err).softplus(),
        log_uncertainty=squeeze(raw_tau).clamp(TAU_MIN, TAU_MAX),
    )


def _values(eps):
    return eps.values if isinstance(eps, ErrorMap) else Tensor._coerce(eps)


def loss_un1(eps, tau):
    """Joint error/uncertainty loss: mean(eps/exp(tau)) + mean(tau)."""
    ev = _values(eps)
    tau = Tensor._coerce(tau)
    if ev.shape != tau.shape:
        raise ShapeError(f"loss_un1 shapes differ: {ev.shape} vs {tau.shape}")
    return (ev * (-tau).exp()).mean() + tau.mean()


def predicted_error_loss(eps_hat, eps):
    """Mean absolute gap between predicted and true error.

    The true error is detached: this loss trains the prediction head to
    mimic the residuals without pulling on the generator through eps.
    """
    eps_hat = Tensor._coerce(eps_hat)
    ev = _values(eps)
    if eps_hat.shape != ev.shape:
        raise ShapeError(
            f"predicted_error_loss shapes differ: {eps_hat.shape} vs {ev.shape}"
        )
    return (eps_hat - ev.detach()).abs().mean()
