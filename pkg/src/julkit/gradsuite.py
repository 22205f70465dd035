"""Named gradient checks for every differentiable op and loss composite.

Each check compares reverse-mode gradients against central finite
differences on small fixed-seed inputs. Elementary smooth ops must agree
to 1e-6, convolution to 1e-5, and bilinear warping plus the loss
composites to 1e-4 (their finite-difference baselines are less exact).
Inputs for kinked ops (abs, clamp) are sampled away from the kinks, and
warp checks evaluate at half-integer sampling coordinates, where the
interpolation is locally smooth.

``run_suite`` returns one result per check and is the engine behind the
``julkit gradcheck`` command. ``fault`` deliberately corrupts one op's
backward rule for the duration of the run so the harness itself can be
tested end to end.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import adaat, losses, uncertainty
from .autodiff import Tensor, concat, gradcheck
from .errors import ConfigError
from .histogram import HistogramSpec, loss_un2
from .layers import Linear
from .models import build_models, generator_forward_batch
from .synthdata import build_dataset, make_sample

SMOOTH_TOL = 1e-6
CONV_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one named gradient check."""

    name: str
    error: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error)) and self.error < self.threshold

    def csv_row(self):
        return (f"{self.name},{self.error:.3e},{self.threshold:.0e},"
                f"{'pass' if self.passed else 'FAIL'}")


def _t(rng, shape, lo=-1.5, hi=1.5, away_from=None, margin=0.3):
    """Uniform test tensor, optionally re-drawn clear of kink points."""
    data = rng.uniform(lo, hi, size=shape)
    if away_from is not None:
        for point in np.atleast_1d(away_from):
            bad = np.abs(data - point) < margin
            while bad.any():
                data[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
                bad = np.abs(data - point) < margin
    return Tensor(data, requires_grad=True)


def _elementwise_cases(rng):
    pos = dict(lo=0.5, hi=2.0)
    return [
        ("neg", lambda x: x.neg().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("exp", lambda x: x.exp().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("log", lambda x: x.log().mean(), [_t(rng, (3, 4), **pos)], SMOOTH_TOL),
        ("sqrt", lambda x: x.sqrt().mean(), [_t(rng, (3, 4), **pos)], SMOOTH_TOL),
        ("square", lambda x: x.square().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("abs", lambda x: x.abs().mean(),
         [_t(rng, (3, 4), away_from=0.0)], SMOOTH_TOL),
        ("sigmoid", lambda x: x.sigmoid().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("tanh", lambda x: x.tanh().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("softplus", lambda x: x.softplus().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("sin", lambda x: x.sin().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("cos", lambda x: x.cos().mean(), [_t(rng, (3, 4))], SMOOTH_TOL),
        ("clamp", lambda x: x.clamp(-0.8, 0.8).square().mean(),
         [_t(rng, (3, 4), away_from=(-0.8, 0.8))], SMOOTH_TOL),
    ]


def _binary_cases(rng):
    away = dict(away_from=0.0, margin=0.4)
    return [
        ("add", lambda a, b: (a + b).mean(),
         [_t(rng, (3, 4)), _t(rng, (3, 4))], SMOOTH_TOL),
        ("sub", lambda a, b: (a - b).mean(),
         [_t(rng, (3, 4)), _t(rng, (3, 4))], SMOOTH_TOL),
        ("mul", lambda a, b: (a * b).mean(),
         [_t(rng, (3, 4)), _t(rng, (3, 4))], SMOOTH_TOL),
        ("div", lambda a, b: (a / b).mean(),
         [_t(rng, (3, 4)), _t(rng, (3, 4), **away)], SMOOTH_TOL),
        ("mul_scalar", lambda a, b: (a * b).square().mean(),
         [_t(rng, (3, 4)), _t(rng, ())], SMOOTH_TOL),
        ("matmul", lambda a, b: (a @ b).square().mean(),
         [_t(rng, (3, 4)), _t(rng, (4, 2))], SMOOTH_TOL),
        ("bias_add", lambda a, b: a.bias_add(b).square().mean(),
         [_t(rng, (2, 3, 4, 4)), _t(rng, (3,))], SMOOTH_TOL),
    ]


def _shape_cases(rng):
    return [
        ("sum", lambda x: x.sum().square() * 1e-2, [_t(rng, (3, 4))], SMOOTH_TOL),
        ("sum_axis", lambda x: x.sum(axis=0).square().mean(),
         [_t(rng, (3, 4))], SMOOTH_TOL),
        ("sum_axes_keepdims",
         lambda x: x.sum(axis=(1, 2), keepdims=True).square().mean(),
         [_t(rng, (2, 3, 4))], SMOOTH_TOL),
        ("mean", lambda x: x.mean(axis=1).square().mean(),
         [_t(rng, (3, 4))], SMOOTH_TOL),
        ("reshape", lambda x: x.reshape(2, 6).square().mean(),
         [_t(rng, (3, 4))], SMOOTH_TOL),
        ("broadcast_to", lambda x: x.broadcast_to((3, 4)).square().mean(),
         [_t(rng, (3, 1))], SMOOTH_TOL),
        ("getitem", lambda x: x[1:, ::2].square().mean(),
         [_t(rng, (3, 4))], SMOOTH_TOL),
        ("concat", lambda a, b: concat([a, b], axis=1).square().mean(),
         [_t(rng, (2, 3)), _t(rng, (2, 2))], SMOOTH_TOL),
        ("subsample2", lambda x: x.subsample2().square().mean(),
         [_t(rng, (1, 2, 6, 6))], SMOOTH_TOL),
        ("upsample2", lambda x: x.upsample2().square().mean(),
         [_t(rng, (1, 2, 3, 3))], SMOOTH_TOL),
    ]


def _conv_case(rng):
    x = _t(rng, (2, 3, 6, 6))
    w = _t(rng, (4, 3, 3, 3), lo=-0.5, hi=0.5)
    return [("conv2d", lambda a, k: a.conv2d(k).square().mean(), [x, w],
             CONV_TOL)]


def _warp_cases(rng):
    # Sampling coordinates sit on quarter-integer pixel positions, inside
    # a single bilinear cell where the op is smooth; see the deform notes.
    x = _t(rng, (1, 2, 6, 6))
    gx = rng.choice(np.linspace(-0.7, 0.7, 8), size=(1, 2, 5, 5))
    gy = rng.choice(np.linspace(-0.7, 0.7, 8), size=(1, 2, 5, 5))
    grid = Tensor(np.stack([gx, gy], axis=-1), requires_grad=True)
    cases = [("bilinear_sample",
              lambda a, g: a.bilinear_sample(g).square().mean(), [x, grid],
              COMPOSITE_TOL)]

    # Identity scale/rotation with a tanh(0.2) translation places every
    # warp sample on a half-integer pixel coordinate, maximally far from
    # the interpolation kinks; small jitter keeps all paths generic.
    base = np.zeros((2, 8, 4))
    base[..., 2:] = np.arctanh(0.2)
    raw = Tensor(base + rng.uniform(-0.02, 0.02, size=base.shape),
                 requires_grad=True)
    feats = _t(rng, (2, 8, 6, 6))

    def warp(f, r):
        return adaat.adaat_apply(f, adaat.squash_params(r)).square().mean()

    def squashed(r):
        p = adaat.squash_params(r)
        return (p.scale.square().mean() + p.rotation.cos().mean()
                + p.tx.square().mean() + p.ty.square().mean())

    cases.append(("deform_warp", warp, [feats, raw], COMPOSITE_TOL))
    cases.append(("deform_params", squashed,
                  [_t(rng, (2, 8, 4), lo=-0.6, hi=0.6)], SMOOTH_TOL))
    return cases


def _loss_cases(rng):
    # The error map takes |generated - truth|; keep the gap off zero so
    # the finite-difference probes stay clear of the absolute-value kink.
    truth = Tensor(rng.uniform(0.3, 0.7, size=(3, 8, 8)))
    signs = np.where(rng.uniform(size=(3, 8, 8)) < 0.5, -1.0, 1.0)
    gen = Tensor(truth.data + signs * rng.uniform(0.1, 0.25, size=(3, 8, 8)),
                 requires_grad=True)
    tau = _t(rng, (8, 8), lo=-2.0, hi=2.0)
    # The error-side histogram is a detached reference; only the
    # uncertainty values carry gradient through the matching loss.
    eps_vals = Tensor(rng.uniform(0.05, 0.8, size=40))
    sig_vals = _t(rng, (40,), lo=0.05, hi=0.8)
    spec = HistogramSpec(bin_count=11, alpha_max=3.0)

    fx = losses.FeatureExtractor(seed=7)
    pe_gen = _t(rng, (3, 8, 8), lo=0.1, hi=0.9)
    pe_truth = Tensor(rng.uniform(0.1, 0.9, size=(3, 8, 8)))

    d_real = _t(rng, (4,))
    d_fake = _t(rng, (4,))

    def un1(g, t):
        return uncertainty.loss_un1(uncertainty.error_map(g, truth), t)

    return [
        ("uncertainty_weighted_error", un1, [gen, tau], COMPOSITE_TOL),
        ("histogram_kl",
         lambda e, s: loss_un2(e, s, spec), [eps_vals, sig_vals],
         COMPOSITE_TOL),
        ("perceptual",
         lambda g: losses.perception_loss(g, pe_truth, fx), [pe_gen],
         COMPOSITE_TOL),
        ("lsgan_generator",
         lambda d: losses.lsgan_generator_loss(d), [d_fake], SMOOTH_TOL),
        ("lsgan_discriminator",
         lambda r, f: losses.lsgan_discriminator_loss(r, f),
         [d_real, d_fake], SMOOTH_TOL),
    ]


def _sync_case(rng):
    bundle = build_models(11)
    net = bundle.sync_net
    for p in net.parameters():
        p.requires_grad = False
    window = _t(rng, (net.window_length,), lo=0.1, hi=0.9)
    crop = _t(rng, (3, 16, 32), lo=0.1, hi=0.9)

    def loss(w, c):
        return losses.sync_loss(losses.sync_score(net, w, c))

    return [("sync_alignment", loss, [window, crop], COMPOSITE_TOL)]


def _generator_case(rng):
    # A 100-weight subset of the full generator pipeline. The affine head
    # is moved to a benign operating point first: a tanh(0.2) translation
    # bias lands every warp sample on half-integer pixel coordinates
    # (maximally far from the bilinear kinks) and small weight noise keeps
    # the head data-dependent so every path carries gradient.
    bundle = build_models(5)
    head = bundle.param_encoder.l2
    head.weight.data = head.weight.data + np.random.default_rng(21).normal(
        0.0, 0.1, size=head.weight.data.shape)
    head.bias.data[2::4] = np.arctanh(0.2)
    head.bias.data[3::4] = np.arctanh(0.2)
    dataset = build_dataset(3)
    sample = make_sample(dataset.train_identities[0], 12,
                         np.random.default_rng(9))
    source = sample.source.reshape((1,) + sample.source.shape)
    window = sample.signal_window.reshape(1, -1)
    refs = concat([r for r in sample.references], axis=0)
    refs = refs.reshape((1,) + refs.shape)

    params = bundle.generator_parameters()

    def loss():
        out = generator_forward_batch(bundle, source, refs, window)
        return out.square().mean()

    def fn(*_unused):
        return loss()

    return [("generator_subset", fn, params, COMPOSITE_TOL, 100)]


_FAULTABLE = {
    "tanh": ("tanh", Tensor.tanh),
    "exp": ("exp", Tensor.exp),
    "conv2d": ("conv2d", Tensor.conv2d),
}


@contextlib.contextmanager
def _inject_fault(op):
    """Scale one op's output by a smooth factor its backward rule ignores.

    The forward perturbation shifts the finite-difference baseline while
    the analytic gradient keeps the unperturbed rule, so the named check
    must fail; used to prove the harness catches wrong gradients.
    """
    if op is None:
        yield
        return
    if op not in _FAULTABLE:
        raise ConfigError(f"no fault hook for op '{op}'")
    attr, original = _FAULTABLE[op]

    def faulty(self, *args, **kwargs):
        out = original(self, *args, **kwargs)
        broken = Tensor._make(out.data * 1.05, (out,), f"fault_{attr}",
                              lambda g, o=out: o._accumulate(g))
        return broken

    setattr(Tensor, attr, faulty)
    try:
        yield
    finally:
        setattr(Tensor, attr, original)


def run_suite(seed=0, fault=None):
    """Run every named check; returns a list of CheckResult."""
    rng = np.random.default_rng(seed)
    cases = (_elementwise_cases(rng) + _binary_cases(rng) + _shape_cases(rng)
             + _conv_case(rng) + _warp_cases(rng) + _loss_cases(rng)
             + _sync_case(rng))
    results = []
    with _inject_fault(fault):
        for case in cases:
            name, fn, inputs, tol = case[:4]
            err = gradcheck(fn, inputs)
            results.append(CheckResult(name, float(err), tol))
        for name, fn, inputs, tol, max_coords in _generator_case(rng):
            err = gradcheck(fn, inputs, max_coords=max_coords,
                            rng=np.random.default_rng(17))
            results.append(CheckResult(name, float(err), tol))
    return results
