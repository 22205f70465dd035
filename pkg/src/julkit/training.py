"""Training loop: Adam, sync pretraining, alternating GAN steps,
deterministic evaluation, metrics logging, and binary checkpoints.

Determinism is load-bearing throughout: every random draw comes from a
seeded stream spawned for one purpose, evaluation runs in fixed chunks
whose results are combined in frame order (so the thread count cannot
change them), and metrics rows are formatted with shortest round-trip
floats, which makes reruns byte-identical.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .autodiff import Tensor
from .config import config_hash
from .errors import ConfigError, NumericsError, ShapeError
from .histogram import loss_un2
from .imgio import write_pgm, write_ppm
from .losses import (FeatureExtractor, lsgan_discriminator_loss,
                     lsgan_generator_loss, perception_loss, sync_loss,
                     sync_score, total_loss)
from .models import build_models, generator_forward_batch, mouth_crop
from .synthdata import build_dataset, make_sample, oracle_mouth_opening
from .uncertainty import (error_map, loss_un1, predicted_error_loss,
                          uncert_forward)

CHECKPOINT_MAGIC = b"JULC"
CHECKPOINT_VERSION = 1
EVAL_CHUNK = 8
METRICS_HEADER = "step,psnr,l1,sync_mae,uncert_corr,hist_kl"
PSNR_CAP = 99.0
PSNR_MSE_FLOOR = 1e-10


# -- optimizer ----------------------------------------------------------


def adam_step(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (value, m, v) arrays.

    ``t`` is the 1-based step index of this update.
    """
    if grad.shape != value.shape:
        raise ShapeError(
            f"gradient shape {grad.shape} does not match parameter "
            f"shape {value.shape}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return value, m, v


class Adam:
    """Adam over a fixed parameter list; missing grads count as zero."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr > 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self._m[i], self._v[i] = adam_step(
                p.data, grad, self._m[i], self._v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- batching -----------------------------------------------------------


@dataclass
class Batch:
    """Stacked training samples ready for the batched generator."""

    source: Tensor
    references: Tensor
    window: Tensor
    truth: Tensor


def _stack_samples(samples):
    src = np.stack([s.source.data for s in samples])
    refs = np.stack([np.concatenate([r.data for r in s.references])
                     for s in samples])
    win = np.stack([s.signal_window.data for s in samples])
    truth = np.stack([s.truth.data for s in samples])
    return Batch(Tensor(src), Tensor(refs), Tensor(win), Tensor(truth))


def sample_batch(identities, batch_size, rng):
    """Draw a batch of frames uniformly across identities and time."""
    samples = []
    for _ in range(batch_size):
        ident = identities[int(rng.integers(0, len(identities)))]
        t = int(rng.integers(0, ident.n_frames))
        samples.append(make_sample(ident, t, rng))
    return _stack_samples(samples)


# -- sync pretraining ---------------------------------------------------


def _sync_pairs(identity, count, rng):
    """Windows, crops, and labels for alignment classification.

    Positive pairs use the frame the window is centred on; negatives crop
    a frame at least three steps away, where the signal has decorrelated.
    """
    wins, crops, labels = [], [], []
    for _ in range(count):
        t = int(rng.integers(0, identity.n_frames))
        sample = make_sample(identity, t, rng)
        label = int(rng.integers(0, 2))
        if label == 1:
            frame = sample.truth
        else:
            while True:
                off = int(rng.integers(3, 9)) * (1 if rng.integers(0, 2) else -1)
                if 0 <= t + off < identity.n_frames:
                    break
            frame = make_sample(identity, t + off, rng).truth
        wins.append(sample.signal_window.data)
        crops.append(mouth_crop(frame).data)
        labels.append(float(label))
    return (Tensor(np.stack(wins)), Tensor(np.stack(crops)),
            np.asarray(labels))


def sync_pair_accuracy(sync_net, identity, count, rng):
    """Fraction of fresh pairs the calibrated logit classifies correctly."""
    win, crop, labels = _sync_pairs(identity, count, rng)
    cosine = sync_score(sync_net, win, crop) * 2.0 - 1.0
    logit = sync_net.calibrated_logit(cosine)
    return float(np.mean((logit.data > 0.0) == (labels > 0.5)))


def pretrain_sync(sync_net, train_identities, holdout_identity, steps, rng,
                  batch_size=32, lr=4e-3):
    """Train the alignment scorer with calibrated BCE, then freeze it.

    The loss is binary cross-entropy on the calibrated logit, so the
    temperature and bias learn alongside the towers. Returns held-out
    accuracy on 400 fresh pairs from an identity the scorer never
    trained on.
    """
    if steps < 1:
        raise ConfigError(f"sync pretraining needs at least 1 step, got {steps}")
    opt = Adam(sync_net.parameters(), lr)
    for _ in range(steps):
        ident = train_identities[int(rng.integers(0, len(train_identities)))]
        win, crop, labels = _sync_pairs(ident, batch_size, rng)
        cosine = sync_score(sync_net, win, crop) * 2.0 - 1.0
        logit = sync_net.calibrated_logit(cosine)
        p = ((logit * 0.5).tanh() * 0.5 + 0.5).clamp(1e-6, 1.0 - 1e-6)
        y = Tensor(labels)
        bce = (y * p.log() + (1.0 - y) * (1.0 - p).log()).mean() * -1.0
        if not np.isfinite(bce.data):
            raise NumericsError("sync pretraining loss is not finite")
        opt.zero_grad()
        bce.backward()
        opt.step()

    acc = sync_pair_accuracy(sync_net, holdout_identity, 400, rng)
    sync_net.freeze()
    return acc


# -- one training step --------------------------------------------------


def _zero():
    return Tensor(0.0)


def train_step(bundle, batch, cfg, opt_g, opt_d, feature_extractor):
    """One alternating update: discriminator first, then generator.

    Returns a dict of scalar loss values for logging. Any non-finite loss
    raises NumericsError and halts training.
    """
    generated = generator_forward_batch(
        bundle, batch.source, batch.references, batch.window)

    d_loss_val = 0.0
    if cfg.enable_adversarial:
        d_real = bundle.discriminator(batch.truth)
        d_fake = bundle.discriminator(generated.detach())
        d_loss = lsgan_discriminator_loss(d_real, d_fake)
        if not np.isfinite(d_loss.data):
            raise NumericsError("discriminator loss is not finite")
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()
        d_loss_val = d_loss.item()

    needs_sigma = cfg.enable_un1 or cfg.enable_un2
    eps = error_map(generated, batch.truth)
    un = _zero()
    pred_err = _zero()
    if needs_sigma:
        head = uncert_forward(bundle.uncertainty_net, generated, batch.source)
        tau = head.log_uncertainty
        if cfg.enable_un1:
            un = un + loss_un1(eps, tau)
        if cfg.enable_un2:
            un = un + loss_un2(eps, tau.exp(), cfg.hist_spec())
        if cfg.enable_pred_error:
            pred_err = predicted_error_loss(head.predicted_error, eps)

    parts = {
        "un": un,
        "ad_g": (lsgan_generator_loss(bundle.discriminator(generated))
                 if cfg.enable_adversarial else _zero()),
        "pe": (perception_loss(generated, batch.truth, feature_extractor)
               if cfg.enable_pe else _zero()),
        "sync": (sync_loss(sync_score(bundle.sync_net, batch.window,
                                      mouth_crop(generated)))
                 if cfg.enable_sync else _zero()),
    }
    g_loss = total_loss(parts, cfg.loss_weights())
    if not np.isfinite(pred_err.data):
        raise NumericsError("loss term pred_error is not finite")
    g_total = g_loss + pred_err
    opt_g.zero_grad()
    g_total.backward()
    opt_g.step()

    out = {name: t.item() for name, t in parts.items()}
    out["pred_error"] = pred_err.item()
    out["g_total"] = g_total.item()
    out["d"] = d_loss_val
    out["l1"] = float(np.mean(np.abs(generated.data - batch.truth.data)))
    return out


# -- evaluation ---------------------------------------------------------


@dataclass
class Metrics:
    """One evaluation snapshot; uncert_corr is None when sigma is untrained."""

    psnr: float
    l1: float
    sync_mae: float
    uncert_corr: float | None
    hist_kl: float


def _format_value(x):
    return "" if x is None else repr(float(x))


def format_metrics_row(step, metrics):
    return ",".join([str(step), _format_value(metrics.psnr),
                     _format_value(metrics.l1),
                     _format_value(metrics.sync_mae),
                     _format_value(metrics.uncert_corr),
                     _format_value(metrics.hist_kl)])


def _eval_sample(identity, t, data_seed):
    rng = np.random.default_rng(np.random.SeedSequence([data_seed, 101, t]))
    return make_sample(identity, t, rng)


def _eval_chunk(bundle, identity, frames, data_seed):
    """Metric ingredients for one fixed chunk of evaluation frames."""
    samples = [_eval_sample(identity, t, data_seed) for t in frames]
    batch = _stack_samples(samples)
    generated = generator_forward_batch(
        bundle, batch.source, batch.references, batch.window)
    tau = uncert_forward(bundle.uncertainty_net, generated,
                         batch.source).log_uncertainty
    gen = generated.data
    truth = batch.truth.data

    psnrs, sync_diffs = [], []
    for i in range(len(frames)):
        mse = float(np.mean((gen[i] - truth[i]) ** 2))
        psnrs.append(PSNR_CAP if mse < PSNR_MSE_FLOOR
                     else 10.0 * np.log10(1.0 / mse))
        sync_diffs.append(abs(oracle_mouth_opening(gen[i], identity)
                              - oracle_mouth_opening(truth[i], identity)))
    l1 = np.abs(gen - truth).mean(axis=(1, 2, 3))
    eps = np.mean(np.abs(gen - truth), axis=1)
    sigma = np.exp(tau.data)
    return psnrs, list(l1), sync_diffs, eps.reshape(-1), sigma.reshape(-1)


def evaluate(bundle, identity, cfg):
    """Deterministic metrics over every frame of one identity.

    Frames are processed in fixed chunks of 8; JULKIT_THREADS only sets
    how many chunks run concurrently, never what they compute.
    """
    n = identity.n_frames
    if n < 1:
        raise ConfigError("evaluation needs a non-empty frame set")
    chunks = [list(range(lo, min(lo + EVAL_CHUNK, n)))
              for lo in range(0, n, EVAL_CHUNK)]
    threads = max(1, int(os.environ.get("JULKIT_THREADS", "1")))

    if threads == 1 or len(chunks) == 1:
        results = [_eval_chunk(bundle, identity, c, cfg.data_seed)
                   for c in chunks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(
                lambda c: _eval_chunk(bundle, identity, c, cfg.data_seed),
                chunks))

    psnrs, l1s, sync_diffs, eps_parts, sigma_parts = [], [], [], [], []
    for p, l, s, e, sg in results:
        psnrs.extend(p)
        l1s.extend(l)
        sync_diffs.extend(s)
        eps_parts.append(e)
        sigma_parts.append(sg)
    eps = np.concatenate(eps_parts)
    sigma = np.concatenate(sigma_parts)

    if cfg.enable_un1 or cfg.enable_un2:
        # before any update the uncertainty map is constant and rank
        # correlation is undefined; report no correlation rather than NaN
        if np.ptp(sigma) == 0.0 or np.ptp(eps) == 0.0:
            uncert_corr = 0.0
        else:
            uncert_corr = float(spearmanr(sigma, eps).statistic)
    else:
        uncert_corr = None
    hist_kl = loss_un2(Tensor(eps), Tensor(sigma), cfg.hist_spec()).item()
    return Metrics(psnr=float(np.mean(psnrs)), l1=float(np.mean(l1s)),
                   sync_mae=float(np.mean(sync_diffs)),
                   uncert_corr=uncert_corr, hist_kl=hist_kl)


# -- checkpoints --------------------------------------------------------


def save_checkpoint(path, bundle, cfg):
    """Binary dump: magic, version, config hash, then named weight blobs."""
    blobs = bundle.named_parameters()
    digest = config_hash(cfg).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<I", len(blobs)))
        for name, tensor in blobs:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise ConfigError(f"checkpoint is truncated while reading {what}")
    return data


def load_checkpoint(path):
    """Read a checkpoint; returns (version, config_hash, {name: array})."""
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from e
    with fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(
                f"checkpoint magic mismatch: expected {CHECKPOINT_MAGIC!r}, "
                f"got {magic!r}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint version mismatch: expected {CHECKPOINT_VERSION}, "
                f"got {version}")
        hash_len = struct.unpack("<I", _read_exact(fh, 4, "hash length"))[0]
        digest = _read_exact(fh, hash_len, "config hash").decode("ascii")
        count = struct.unpack("<I", _read_exact(fh, 4, "blob count"))[0]
        blobs = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read_exact(fh, 4, "name length"))[0]
            name = _read_exact(fh, name_len, "blob name").decode("utf-8")
            rank = struct.unpack("<I", _read_exact(fh, 4, "rank"))[0]
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, "dimension"))[0]
                for _ in range(rank))
            n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, n_items * 8, f"values of {name}")
            blobs[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return version, digest, blobs


def restore_bundle(bundle, blobs):
    """Load named blobs into a freshly built bundle, checking shapes."""
    named = dict(bundle.named_parameters())
    if set(named) != set(blobs):
        missing = sorted(set(named) - set(blobs))
        extra = sorted(set(blobs) - set(named))
        raise ConfigError(
            f"checkpoint blob names do not match the model: "
            f"missing {missing}, unexpected {extra}")
    for name, tensor in named.items():
        if blobs[name].shape != tensor.data.shape:
            raise ShapeError(
                f"checkpoint blob {name} has shape {blobs[name].shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data = blobs[name].astype(np.float64)


# -- artifact dumps -----------------------------------------------------


def dump_samples(bundle, identity, cfg, out_dir, count=8):
    """Write source/generated/truth image triplets plus sigma and error
    maps (each rescaled to [0,1] by its own max) for spaced test frames."""
    samples_dir = os.path.join(out_dir, "samples")
    maps_dir = os.path.join(out_dir, "maps")
    os.makedirs(samples_dir, exist_ok=True)
    os.makedirs(maps_dir, exist_ok=True)
    n = identity.n_frames
    frames = sorted({int(round(i * (n - 1) / (count - 1)))
                     for i in range(count)}) if count > 1 else [0]
    for t in frames:
        sample = _eval_sample(identity, t, cfg.data_seed)
        batch = _stack_samples([sample])
        generated = generator_forward_batch(
            bundle, batch.source, batch.references, batch.window)
        tau = uncert_forward(bundle.uncertainty_net, generated,
                             batch.source).log_uncertainty
        gen = generated.data[0]
        eps = np.mean(np.abs(gen - sample.truth.data), axis=0)
        sigma = np.exp(tau.data[0])
        stem = f"frame_{t:03d}"
        write_ppm(os.path.join(samples_dir, f"{stem}_source.ppm"),
                  sample.source.data)
        write_ppm(os.path.join(samples_dir, f"{stem}_generated.ppm"), gen)
        write_ppm(os.path.join(samples_dir, f"{stem}_truth.ppm"),
                  sample.truth.data)
        for label, img in (("sigma", sigma), ("eps", eps)):
            top = float(img.max())
            scaled = img / top if top > 0 else np.zeros_like(img)
            write_pgm(os.path.join(maps_dir, f"{stem}_{label}.pgm"), scaled)
    return frames


# -- full run -----------------------------------------------------------


@dataclass
class TrainResult:
    bundle: object
    dataset: object
    rows: list
    sync_accuracy: float | None
    metrics_by_step: dict


def train(cfg, progress=None):
    """Run a full training job as described by the config.

    When ``cfg.out_dir`` is set, writes metrics.csv, checkpoint.julc, and
    sample image dumps there. Returns the bundle and the metrics rows.
    """
    dataset = build_dataset(cfg.data_seed)
    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    bundle = build_models(streams[0])
    feature_extractor = FeatureExtractor(streams[1])

    sync_acc = None
    if cfg.enable_sync:
        sync_acc = pretrain_sync(
            bundle.sync_net, dataset.train_identities, dataset.test_identity,
            cfg.sync_pretrain_steps, np.random.default_rng(streams[2]))
    else:
        bundle.sync_net.freeze()

    opt_g = Adam(bundle.generator_parameters(), cfg.lr)
    opt_d = Adam(bundle.discriminator_parameters(), cfg.lr)
    batch_rng = np.random.default_rng(streams[3])

    rows = [METRICS_HEADER]
    metrics_by_step = {}

    def record(step):
        metrics = evaluate(bundle, dataset.test_identity, cfg)
        metrics_by_step[step] = metrics
        rows.append(format_metrics_row(step, metrics))

    record(0)
    for step in range(1, cfg.steps + 1):
        losses = train_step(bundle, sample_batch(
            dataset.train_identities, cfg.batch, batch_rng),
            cfg, opt_g, opt_d, feature_extractor)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            record(step)
        if progress is not None:
            progress(step, losses)

    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "metrics.csv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(rows) + "\n")
        save_checkpoint(os.path.join(cfg.out_dir, "checkpoint.julc"),
                        bundle, cfg)
        dump_samples(bundle, dataset.test_identity, cfg, cfg.out_dir)

    return TrainResult(bundle=bundle, dataset=dataset, rows=rows,
                       sync_accuracy=sync_acc, metrics_by_step=metrics_by_step)
