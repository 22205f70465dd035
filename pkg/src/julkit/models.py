"""Networks for signal-driven face inpainting.

The generator follows a fixed dataflow: encode the signal window and the
masked source, pool the reference frames into appearance features, derive
per-channel affine coefficients from the fused identity/signal features,
deform the reference features with the adaptive affine operator, and
decode the deformed features together with the source features into the
output image (sigmoid, so values stay in [0, 1]).

A small strided-convolution discriminator and a two-tower sync scorer
round out the bundle; the uncertainty head lives in its own module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adaat import adaat_apply, squash_params
from .autodiff import Tensor, concat
from .errors import ShapeError
from .layers import Conv2d, Linear, collect_parameters
from .synthdata import IMAGE_SIZE, MASK_ROW, N_REFERENCES, WINDOW_LENGTH
from .uncertainty import UncertaintyNet

FEATURE_CHANNELS = 16
AUDIO_DIM = 16


class AudioEncoder:
    """MLP from the scalar-signal window to a 16-dim feature."""

    def __init__(self, rng):
        self.l1 = Linear(WINDOW_LENGTH, 32, rng)
        self.l2 = Linear(32, AUDIO_DIM, rng)

    def __call__(self, window):
        return self.l2(self.l1(window).tanh()).tanh()

    def parameters(self):
        return collect_parameters(self.l1, self.l2)


class MapEncoder:
    """Two convolutions producing a 16-channel map at half resolution."""

    def __init__(self, in_channels, rng):
        self.c1 = Conv2d(in_channels, FEATURE_CHANNELS, 3, rng, down=True)
        self.c2 = Conv2d(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, rng)

    def __call__(self, x):
        return self.c2(self.c1(x).tanh()).tanh()

    def parameters(self):
        return collect_parameters(self.c1, self.c2)


class IdEncoder:
    """Fuses source and reference features into identity features."""

    def __init__(self, rng):
        self.c1 = Conv2d(2 * FEATURE_CHANNELS, FEATURE_CHANNELS, 3, rng)

    def __call__(self, x):
        return self.c1(x).tanh()

    def parameters(self):
        return self.c1.parameters()


class ParamEncoder:
    """Global-pooled MLP emitting raw per-channel affine coefficients.

    The final layer is zero-initialized so an untrained network predicts
    the identity transform for every channel.
    """

    def __init__(self, rng):
        in_dim = AUDIO_DIM + FEATURE_CHANNELS
        self.l1 = Linear(in_dim, 32, rng)
        self.l2 = Linear(32, FEATURE_CHANNELS * 4, rng, zero=True)

    def __call__(self, fused):
        pooled = fused.mean(axis=(2, 3))
        raw = self.l2(self.l1(pooled).tanh())
        n = raw.shape[0]
        return raw.reshape(n, FEATURE_CHANNELS, 4)

    def parameters(self):
        return collect_parameters(self.l1, self.l2)


class DeformCoder:
    """Single convolution used on either side of the affine deformation."""

    def __init__(self, rng):
        self.c1 = Conv2d(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, rng)

    def __call__(self, x):
        return self.c1(x).tanh()

    def parameters(self):
        return self.c1.parameters()


class FaceDecoder:
    """Decodes deformed + source features back to a full-resolution image."""

    def __init__(self, rng):
        self.c1 = Conv2d(2 * FEATURE_CHANNELS, FEATURE_CHANNELS, 3, rng)
        self.c2 = Conv2d(FEATURE_CHANNELS, 8, 3, rng)
        self.c3 = Conv2d(8, 3, 3, rng)

    def __call__(self, x):
        h = self.c1(x).tanh().upsample2()
        h = self.c2(h).tanh()
        return self.c3(h).sigmoid()

    def parameters(self):
        return collect_parameters(self.c1, self.c2, self.c3)


class Discriminator:
    """Three strided convolutions, a 1x1 head, and a global mean score."""

    def __init__(self, rng):
        self.c1 = Conv2d(3, 8, 3, rng, down=True)
        self.c2 = Conv2d(8, 16, 3, rng, down=True)
        self.c3 = Conv2d(16, 16, 3, rng, down=True)
        self.head = Conv2d(16, 1, 1, rng)

    def __call__(self, img):
        h = self.c1(img).tanh()
        h = self.c2(h).tanh()
        h = self.c3(h).tanh()
        return self.head(h).mean(axis=(1, 2, 3))

    def parameters(self):
        return collect_parameters(self.c1, self.c2, self.c3, self.head)


class SyncNet:
    """Two-tower alignment scorer: signal window vs lower-half crop.

    Cosine similarity between a signal-window embedding and a mouth-crop
    embedding scores how well the two line up. Two details matter for
    trainability. First, the audio tower is seeded so that its embedding
    starts as soft indicators of the discrete mouth heights the signal
    rounds to; with a generic random start both towers tend to collapse
    onto a single shared direction and the pair classifier plateaus near
    chance. Second, a learned temperature and bias turn the raw cosine
    into a calibrated logit, so the classification loss can sharpen the
    decision without distorting the embedding geometry.
    """

    window_length = WINDOW_LENGTH
    _STEP_GAIN = 60.0
    _INITIAL_TEMPERATURE = 6.0

    def __init__(self, rng):
        self.a1 = Linear(WINDOW_LENGTH, 32, rng)
        self.a2 = Linear(32, AUDIO_DIM, rng)
        self.v1 = Conv2d(4, 8, 3, rng, down=True)
        self.v2 = Conv2d(8, 16, 3, rng, down=True)
        self.v3 = Linear(16 * 4 * 8, AUDIO_DIM, rng)
        temp = self._INITIAL_TEMPERATURE
        self.log_temp = Tensor(np.array(np.log(temp)), requires_grad=True)
        self.cal_bias = Tensor(np.array(-0.5 * temp), requires_grad=True)
        self._seed_audio_tower()

    def _seed_audio_tower(self):
        """Start the audio embedding as soft mouth-height bin indicators.

        The synthetic mouth height is int(round(2 + 10 * signal)), so the
        height changes exactly at the signal values (h - 1.5) / 10 for
        h in 3..10. Hidden units 0..7 become steep tanh steps at those
        boundaries applied to the window centre; embedding dims 0..8
        combine adjacent steps into one soft indicator per height bin.
        The remaining random weights are damped, not zeroed, so training
        can still grow features beyond the seeded ones.
        """
        edges = [(h - 1.5) / 10.0 for h in range(3, 11)]
        gain = self._STEP_GAIN
        w1, b1 = self.a1.weight.data, self.a1.bias.data
        w1[:, :8] = 0.0
        for k, edge in enumerate(edges):
            w1[WINDOW_LENGTH // 2, k] = gain
            b1[k] = -gain * edge
        w1[:, 8:] *= 0.3
        w2, b2 = self.a2.weight.data, self.a2.bias.data
        w2 *= 0.1
        for j in range(9):
            if j >= 1:
                w2[j - 1, j] += 0.5
            else:
                b2[j] += 0.5
            if j < 8:
                w2[j, j] -= 0.5
            else:
                b2[j] += 0.5

    def audio_embed(self, window):
        squeeze = window.ndim == 1
        w = window.reshape(1, -1) if squeeze else window
        emb = self.a2(self.a1(w).tanh())
        return emb[0] if squeeze else emb

    def visual_embed(self, crop):
        squeeze = crop.ndim == 3
        x = crop.reshape((1,) + crop.shape) if squeeze else crop
        # a red-vs-green/blue opponent channel makes the mouth pixels,
        # which are the only strongly red ones, directly visible to the
        # first convolution
        red = x[:, 0] - (x[:, 1] + x[:, 2]) * 0.5
        x = concat([x, red.reshape((red.shape[0], 1) + red.shape[1:])],
                   axis=1)
        h = self.v1(x).tanh()
        h = self.v2(h).tanh()
        emb = self.v3(h.reshape(h.shape[0], -1))
        return emb[0] if squeeze else emb

    def calibrated_logit(self, cosine):
        """Map a cosine in [-1, 1] to a pair-classification logit."""
        temp = self.log_temp.exp().broadcast_to(cosine.shape)
        return cosine * temp + self.cal_bias.broadcast_to(cosine.shape)

    def parameters(self):
        return collect_parameters(self.a1, self.a2, self.v1, self.v2,
                                  self.v3) + [self.log_temp, self.cal_bias]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False


@dataclass
class ModelBundle:
    """Every trainable network of the system, built from one seed."""

    audio_encoder: AudioEncoder
    source_encoder: MapEncoder
    reference_encoder: MapEncoder
    id_encoder: IdEncoder
    param_encoder: ParamEncoder
    deform_encoder: DeformCoder
    deform_decoder: DeformCoder
    face_decoder: FaceDecoder
    discriminator: Discriminator
    uncertainty_net: UncertaintyNet
    sync_net: SyncNet

    def generator_parameters(self):
        """Parameters updated by the generator step (uncertainty head included)."""
        return collect_parameters(
            self.audio_encoder, self.source_encoder, self.reference_encoder,
            self.id_encoder, self.param_encoder, self.deform_encoder,
            self.deform_decoder, self.face_decoder, self.uncertainty_net,
        )

    def discriminator_parameters(self):
        return self.discriminator.parameters()

    def named_parameters(self):
        """Stable (name, tensor) listing used by the checkpoint format."""
        groups = [
            ("audio_encoder", self.audio_encoder),
            ("source_encoder", self.source_encoder),
            ("reference_encoder", self.reference_encoder),
            ("id_encoder", self.id_encoder),
            ("param_encoder", self.param_encoder),
            ("deform_encoder", self.deform_encoder),
            ("deform_decoder", self.deform_decoder),
            ("face_decoder", self.face_decoder),
            ("discriminator", self.discriminator),
            ("uncertainty_net", self.uncertainty_net),
            ("sync_net", self.sync_net),
        ]
        out = []
        for gname, module in groups:
            for i, p in enumerate(module.parameters()):
                out.append((f"{gname}.p{i}", p))
        return out

    def parameter_count(self):
        return sum(p.size for _, p in self.named_parameters())


def build_models(seed):
    """Construct the full bundle deterministically from a seed (or stream)."""
    rng = np.random.default_rng(seed)
    return ModelBundle(
        audio_encoder=AudioEncoder(rng),
        source_encoder=MapEncoder(3, rng),
        reference_encoder=MapEncoder(3 * N_REFERENCES, rng),
        id_encoder=IdEncoder(rng),
        param_encoder=ParamEncoder(rng),
        deform_encoder=DeformCoder(rng),
        deform_decoder=DeformCoder(rng),
        face_decoder=FaceDecoder(rng),
        discriminator=Discriminator(rng),
        uncertainty_net=UncertaintyNet(6, rng),
        sync_net=SyncNet(rng),
    )


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except ShapeError as e:
        raise ShapeError(f"[{name}] {e}") from e


def generator_forward_batch(bundle, source, references, window):
    """Run the generator on a batch.

    ``source`` is [N,3,H,W], ``references`` is [N,15,H,W] (five reference
    frames stacked on channels), ``window`` is [N,9]. Returns [N,3,H,W]
    in [0,1].
    """
    f_a = _stage("audio_encoder", bundle.audio_encoder, window)
    f_s = _stage("source_encoder", bundle.source_encoder, source)
    f_r = _stage("reference_encoder", bundle.reference_encoder, references)
    f_i = _stage("id_encoder", bundle.id_encoder, concat([f_s, f_r], axis=1))
    n, _, h, w = f_i.shape
    f_a_map = f_a.reshape(n, AUDIO_DIM, 1, 1).broadcast_to((n, AUDIO_DIM, h, w))
    raw = _stage("param_encoder", bundle.param_encoder,
                 concat([f_a_map, f_i], axis=1))
    params = squash_params(raw)
    deformed = _stage(
        "deform", lambda fr: bundle.deform_decoder(
            adaat_apply(bundle.deform_encoder(fr), params)), f_r)
    return _stage("face_decoder", bundle.face_decoder,
                  concat([deformed, f_s], axis=1))


def stack_references(sample):
    """Concatenate a sample's five reference frames on the channel axis."""
    return concat(sample.references, axis=0)


def generator_forward(bundle, sample):
    """Single-sample convenience wrapper around the batched pipeline."""
    source = sample.source.reshape((1,) + sample.source.shape)
    refs = stack_references(sample)
    refs = refs.reshape((1,) + refs.shape)
    window = sample.signal_window.reshape(1, -1)
    return generator_forward_batch(bundle, source, refs, window)[0]


def mouth_crop(images):
    """Lower-half crop fed to the sync scorer: rows 16..31."""
    if images.ndim == 3:
        return images[:, MASK_ROW:IMAGE_SIZE, :]
    return images[:, :, MASK_ROW:IMAGE_SIZE, :]
