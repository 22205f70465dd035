"""Procedural signal-driven face dataset.

Each identity is a deterministic function of its seed: a smooth colored
background, a head ellipse, and a mouth whose height tracks a scalar
driving signal a(t). Frames are 32x32 RGB in [0, 1]. Training samples
pair the ground-truth frame with a masked source (lower half zeroed, so
the mouth must be reconstructed from the signal), five reference frames
of the same identity, and the 9-step signal window around t.

The mouth is drawn in a strongly red color and everything else is kept
chromatically muted, so a simple per-row redness count recovers the
rendered mouth opening exactly; that oracle is used only for evaluation.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import RangeError
from .imgio import read_ppm, write_ppm

IMAGE_SIZE = 32
MASK_ROW = IMAGE_SIZE // 2
WINDOW_RADIUS = 4
WINDOW_LENGTH = 2 * WINDOW_RADIUS + 1
N_REFERENCES = 5
MOUTH_THRESHOLD = 0.5


@dataclass(frozen=True)
class FaceParams:
    head_center: tuple
    head_axes: tuple
    head_color: tuple
    mouth_row: int
    mouth_col: int
    mouth_width: int
    mouth_color: tuple


@dataclass
class Identity:
    """One synthetic subject: background field, face geometry, frame count."""

    seed: int
    n_frames: int
    background: np.ndarray
    face: FaceParams


@dataclass
class FrameSample:
    """One training example: ground truth, masked source, refs, signal."""

    truth: Tensor
    source: Tensor
    references: list
    signal_window: Tensor
    frame_index: int
    reference_indices: np.ndarray


def signal(t, seed):
    """Scalar driving signal a(t) in [0.1, 0.9] with seeded phases."""
    phi1, phi2 = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, size=2)
    t = np.asarray(t, dtype=np.float64)
    value = (0.5 + 0.25 * np.sin(2.0 * np.pi * t / 17.0 + phi1)
             + 0.15 * np.sin(2.0 * np.pi * t / 5.0 + phi2))
    return float(value) if value.ndim == 0 else value


def make_identity(seed, n_frames=256):
    """Deterministically construct an identity from its seed."""
    rng = np.random.default_rng(seed)
    # smooth background: low-res noise, bilinearly upsampled, chroma muted
    coarse = rng.uniform(0.35, 0.65, size=(3, 4, 4))
    idx = np.linspace(0, 3, IMAGE_SIZE)
    lo = np.floor(idx).astype(int)
    hi = np.minimum(lo + 1, 3)
    frac = idx - lo
    rows = coarse[:, lo, :] * (1 - frac)[None, :, None] + coarse[:, hi, :] * frac[None, :, None]
    background = (rows[:, :, lo] * (1 - frac)[None, None, :]
                  + rows[:, :, hi] * frac[None, None, :])

    head_center = (int(rng.integers(13, 17)), int(rng.integers(14, 18)))
    head_axes = (int(rng.integers(10, 13)), int(rng.integers(8, 11)))
    r = rng.uniform(0.45, 0.7)
    head_color = (r, r - rng.uniform(0.05, 0.25), r - rng.uniform(0.05, 0.25))
    face = FaceParams(
        head_center=head_center,
        head_axes=head_axes,
        head_color=head_color,
        mouth_row=int(rng.integers(22, 26)),
        mouth_col=int(rng.integers(14, 18)),
        mouth_width=int(rng.integers(6, 11)),
        mouth_color=(rng.uniform(0.85, 0.95), rng.uniform(0.05, 0.15),
                     rng.uniform(0.05, 0.15)),
    )
    return Identity(seed=int(seed), n_frames=int(n_frames),
                    background=background, face=face)


def mouth_height(a):
    """Rendered mouth height in pixels for signal value a."""
    return int(round(2.0 + 10.0 * a))


def _mouth_rows(face, h):
    r0 = face.mouth_row - h // 2
    return r0, r0 + h


def _mouth_cols(face):
    c0 = face.mouth_col - face.mouth_width // 2
    return c0, c0 + face.mouth_width


def render_frame(identity, a):
    """Render the [3,32,32] frame for signal value a; fully deterministic."""
    img = identity.background.copy()
    face = identity.face
    ys, xs = np.ogrid[:IMAGE_SIZE, :IMAGE_SIZE]
    cy, cx = face.head_center
    ry, rx = face.head_axes
    inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    for ch in range(3):
        img[ch][inside] = face.head_color[ch]
    h = mouth_height(a)
    r0, r1 = _mouth_rows(face, h)
    c0, c1 = _mouth_cols(face)
    for ch in range(3):
        img[ch, r0:r1, c0:c1] = face.mouth_color[ch]
    return img


def oracle_mouth_opening(img, identity):
    """Count rows whose redness exceeds 0.5 inside the mouth column band.

    Redness is R - (G + B)/2 averaged over the band; rendered frames have
    mouth rows near 0.8 and everything else below ~0.35. Evaluation only,
    never used as a training signal.
    """
    img = img.data if isinstance(img, Tensor) else np.asarray(img)
    c0, c1 = _mouth_cols(identity.face)
    band = img[:, :, c0:c1]
    redness = band[0] - 0.5 * (band[1] + band[2])
    return float(np.sum(redness.mean(axis=1) > MOUTH_THRESHOLD))


def make_sample(identity, t, rng):
    """Assemble the FrameSample for frame t of an identity.

    Truth is the rendered frame; the source has rows 16..31 zeroed; five
    reference indices are drawn uniformly without replacement from the
    other frames; the signal window [a(t-4) .. a(t+4)] clamps at the
    sequence edges.
    """
    if not 0 <= t < identity.n_frames:
        raise RangeError(
            f"frame index {t} out of range [0, {identity.n_frames})"
        )
    truth = render_frame(identity, signal(t, identity.seed))
    source = truth.copy()
    source[:, MASK_ROW:, :] = 0.0

    others = np.concatenate([np.arange(t), np.arange(t + 1, identity.n_frames)])
    ref_idx = rng.choice(others, size=N_REFERENCES, replace=False)
    references = [Tensor(render_frame(identity, signal(int(i), identity.seed)))
                  for i in ref_idx]

    steps = np.clip(np.arange(t - WINDOW_RADIUS, t + WINDOW_RADIUS + 1),
                    0, identity.n_frames - 1)
    window = np.array([signal(int(s), identity.seed) for s in steps])

    return FrameSample(
        truth=Tensor(truth),
        source=Tensor(source),
        references=references,
        signal_window=Tensor(window),
        frame_index=int(t),
        reference_indices=np.asarray(ref_idx, dtype=int),
    )


@dataclass
class Dataset:
    """Train identities plus one held-out identity."""

    train_identities: list
    test_identity: Identity


def build_dataset(seed, n_train=4, train_frames=256, test_frames=64):
    """Spawn identity seeds from the dataset seed and build all identities."""
    master = np.random.default_rng(seed)
    seeds = master.integers(0, 2**31 - 1, size=n_train + 1)
    train = [make_identity(int(s), train_frames) for s in seeds[:n_train]]
    test = make_identity(int(seeds[n_train]), test_frames)
    return Dataset(train_identities=train, test_identity=test)


def dump_frames(identity, out_dir):
    """Write every truth frame as PPM plus an index CSV; returns the index path."""
    os.makedirs(out_dir, exist_ok=True)
    index_path = os.path.join(out_dir, "index.csv")
    with open(index_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_index", "identity_seed", "signal"])
        for t in range(identity.n_frames):
            a = signal(t, identity.seed)
            name = f"frame_{identity.seed}_{t:05d}.ppm"
            write_ppm(os.path.join(out_dir, name), render_frame(identity, a))
            writer.writerow([t, identity.seed, repr(a)])
    return index_path


def load_frames(out_dir):
    """Read a dumped directory back: (frames [N,3,H,W], index rows)."""
    index_path = os.path.join(out_dir, "index.csv")
    rows = []
    with open(index_path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append({
                "frame_index": int(row["frame_index"]),
                "identity_seed": int(row["identity_seed"]),
                "signal": float(row["signal"]),
            })
    frames = np.stack([
        read_ppm(os.path.join(
            out_dir, f"frame_{r['identity_seed']}_{r['frame_index']:05d}.ppm"))
        for r in rows
    ])
    return frames, rows
