"""Binary PPM/PGM image files for dataset dumps and inspection images.

Images travel as float64 arrays in [0, 1]; files store 8-bit samples, so
one round trip quantizes to 1/255 steps.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def _to_bytes(img):
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    """Write a [3,H,W] float image in [0,1] as binary PPM (P6)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"write_ppm expects [3,H,W], got {img.shape}")
    _, h, w = img.shape
    data = _to_bytes(img).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data)


def write_pgm(path, img):
    """Write an [H,W] float image in [0,1] as binary PGM (P5)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"write_pgm expects [H,W], got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(_to_bytes(img).tobytes())


def _read_header(f, magic):
    got = f.readline().strip()
    if got != magic:
        raise ShapeError(f"expected {magic.decode()} file, got {got!r}")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ShapeError("truncated image header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ShapeError(f"only 8-bit images supported, maxval={maxval}")
    return w, h


def read_ppm(path):
    """Read a binary PPM into a [3,H,W] float array in [0,1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        raw = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path):
    """Read a binary PGM into an [H,W] float array in [0,1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        raw = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return raw.reshape(h, w).astype(np.float64) / 255.0
