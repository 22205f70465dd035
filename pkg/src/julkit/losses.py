"""Adversarial, perceptual, and synchronization objectives.

The generator is trained against a least-squares discriminator, a frozen
randomly-initialized feature stack standing in for a pretrained
perceptual network, and a frozen two-tower sync scorer. ``total_loss``
combines them with fixed scalar weights; the discriminator has its own
objective optimized on alternating steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NumericsError, ShapeError
from .layers import Conv2d


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights for the four generator loss terms."""

    w_un: float = 1.0
    w_ad: float = 1.0
    w_pe: float = 10.0
    w_sync: float = 0.1

    def __post_init__(self):
        for name in ("w_un", "w_ad", "w_pe", "w_sync"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


class FeatureExtractor:
    """Frozen random convolution stack used for the perceptual loss.

    Three 3x3 convolution layers (channels 8, 16, 32), each followed by
    tanh and 2x decimation; all three activations are tapped. Weights are
    drawn once from the seed and never trained, so two constructions from
    the same seed are bit-identical.
    """

    def __init__(self, seed, in_channels=3, taps=(0, 1, 2)):
        rng = np.random.default_rng(seed)
        widths = (8, 16, 32)
        self.layers = []
        c = in_channels
        for w in widths:
            conv = Conv2d(c, w, 3, rng, down=True)
            conv.weight.requires_grad = False
            conv.bias.requires_grad = False
            self.layers.append(conv)
            c = w
        self.taps = tuple(taps)

    def features(self, x):
        """Tapped activations for an image or image batch."""
        feats = []
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h).tanh()
            if i in self.taps:
                feats.append(h)
        return feats


def lsgan_generator_loss(d_fake):
    """Least-squares generator objective: E[(D(generated) - 1)^2]."""
    d_fake = Tensor._coerce(d_fake)
    return (d_fake - 1.0).square().mean()


def lsgan_discriminator_loss(d_real, d_fake):
    """Least-squares critic objective: (E[(D(real)-1)^2] + E[D(fake)^2]) / 2."""
    d_real = Tensor._coerce(d_real)
    d_fake = Tensor._coerce(d_fake)
    return ((d_real - 1.0).square().mean() + d_fake.square().mean()) * 0.5


def perception_loss(gen, gt, fx):
    """Mean absolute gap between tapped features of generated and target.

    Each tapped layer contributes mean |phi_i(gt) - phi_i(gen)|; the
    target side carries no gradient.
    """
    gen = Tensor._coerce(gen)
    gt = Tensor._coerce(gt)
    if gen.shape != gt.shape:
        raise ShapeError(f"perception_loss shapes differ: {gen.shape} vs {gt.shape}")
    gen_feats = fx.features(gen)
    gt_feats = fx.features(gt.detach())
    total = None
    for fg, ft in zip(gen_feats, gt_feats):
        term = (fg - ft.detach()).abs().mean()
        total = term if total is None else total + term
    return total


def cosine_similarity(a, b, axis=-1):
    """Cosine of the angle between embeddings along the last axis."""
    a = Tensor._coerce(a)
    b = Tensor._coerce(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        dot = (a * b).sum()
        nn = ((a * a).sum() * (b * b).sum() + 1e-24).sqrt()
    else:
        dot = (a * b).sum(axis=axis)
        nn = ((a * a).sum(axis=axis) * (b * b).sum(axis=axis) + 1e-24).sqrt()
    return dot / nn


def sync_score(syncnet, signal_window, mouth_crop):
    """Alignment score in [0, 1] between a signal window and a mouth crop.

    Embeds both sides with the two-tower network and maps their cosine
    similarity through (cos + 1) / 2. Accepts a single ([L], [C,H,W])
    pair or batches ([N,L], [N,C,H,W]), returning a scalar or [N].
    """
    signal_window = Tensor._coerce(signal_window)
    expected = syncnet.window_length
    if signal_window.shape[-1] != expected:
        raise ShapeError(
            f"signal window length {signal_window.shape[-1]} does not match "
            f"the network's expected {expected}"
        )
    a_emb = syncnet.audio_embed(signal_window)
    v_emb = syncnet.visual_embed(mouth_crop)
    cos = cosine_similarity(a_emb, v_emb)
    return (cos + 1.0) * 0.5


def sync_loss(score):
    """Push alignment scores toward 1: E[(score - 1)^2]."""
    score = Tensor._coerce(score)
    return (score - 1.0).square().mean()


_PART_NAMES = ("un", "ad_g", "pe", "sync")


def total_loss(parts, weights):
    """Weighted sum of the generator objectives.

    ``parts`` maps {un, ad_g, pe, sync} to scalar loss nodes; a
    non-finite part raises NumericsError naming the offending term.
    """
    for name in _PART_NAMES:
        if name not in parts:
            raise ConfigError(f"total_loss missing part {name!r}")
        val = Tensor._coerce(parts[name]).data
        if not np.all(np.isfinite(val)):
            raise NumericsError(f"loss term {name!r} is not finite")
    return (Tensor._coerce(parts["un"]) * weights.w_un
            + Tensor._coerce(parts["ad_g"]) * weights.w_ad
            + Tensor._coerce(parts["pe"]) * weights.w_pe
            + Tensor._coerce(parts["sync"]) * weights.w_sync)
