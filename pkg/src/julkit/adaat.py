"""Per-channel adaptive affine deformation of feature maps.

Each channel gets its own scale S, rotation R, and translation (T_x, T_y).
Output coordinates (x, y), normalized to [-1, 1] with the origin at the
map center, are mapped to source sampling coordinates by

    x_hat = S cos(R) x - S sin(R) y + T_x
    y_hat = S sin(R) x + S cos(R) y + T_y

(backward warping), and the deformed map is read off with bilinear
sampling. Raw network outputs are squashed so that an all-zero prediction
is exactly the identity transform.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from .errors import ShapeError


@dataclass
class AffineParams:
    """Per-channel affine coefficients.

    Each field is a Tensor shaped [C] (or [N, C] for a batch): ``scale``
    is positive, ``rotation`` is radians in [-pi, pi], and the
    translations lie in [-1, 1] in normalized coordinates.
    """

    scale: Tensor
    rotation: Tensor
    tx: Tensor
    ty: Tensor

    @property
    def channels(self):
        return self.scale.shape[-1]


def squash_params(raw):
    """Map raw head outputs [..., C, 4] to valid affine coefficients.

    Columns are (s, r, tx, ty); S = 2 sigmoid(s) in (0, 2), R = pi tanh(r),
    T = tanh(t) componentwise. Zero raw input gives the identity transform.
    """
    raw = Tensor._coerce(raw)
    if raw.ndim not in (2, 3) or raw.shape[-1] != 4:
        raise ShapeError(
            f"raw affine parameters must be [C,4] or [N,C,4], got {raw.shape}"
        )
    s = raw[..., 0]
    r = raw[..., 1]
    tx = raw[..., 2]
    ty = raw[..., 3]
    return AffineParams(
        scale=s.sigmoid() * 2.0,
        rotation=r.tanh() * math.pi,
        tx=tx.tanh(),
        ty=ty.tanh(),
    )


@functools.lru_cache(maxsize=8)
def _coord_grids(h, w):
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    x = 2.0 * xs / (w - 1) - 1.0 if w > 1 else np.zeros_like(xs)
    y = 2.0 * ys / (h - 1) - 1.0 if h > 1 else np.zeros_like(ys)
    return x, y


def adaat_grid(params, h, w, batch=None):
    """Build the per-channel sampling grid for the given output size.

    Returns a Tensor [C,H,W,2] (or [N,C,H,W,2] when params are batched)
    of normalized source coordinates; differentiable in the parameters.
    """
    batched = params.scale.ndim == 2
    if batched:
        n, c = params.scale.shape
        lead = (n, c, 1, 1)
        full = (n, c, h, w)
    else:
        c = params.scale.shape[0]
        lead = (c, 1, 1)
        full = (c, h, w)
    if batch is not None and batched and params.scale.shape[0] != batch:
        raise ShapeError("parameter batch size does not match features")

    xg, yg = _coord_grids(h, w)
    x = Tensor(xg).broadcast_to(full)
    y = Tensor(yg).broadcast_to(full)

    cos_r = params.rotation.cos().reshape(lead).broadcast_to(full)
    sin_r = params.rotation.sin().reshape(lead).broadcast_to(full)
    s = params.scale.reshape(lead).broadcast_to(full)
    tx = params.tx.reshape(lead).broadcast_to(full)
    ty = params.ty.reshape(lead).broadcast_to(full)

    x_hat = s * cos_r * x - s * sin_r * y + tx
    y_hat = s * sin_r * x + s * cos_r * y + ty
    return concat([x_hat.reshape(full + (1,)), y_hat.reshape(full + (1,))],
                  axis=-1)


def adaat_apply(features, params):
    """Deform a [C,H,W] map (or [N,C,H,W] batch) per channel.

    Identity parameters (S=1, R=0, T=0) reproduce the input bit-exactly;
    the affine map sends output coordinates to source coordinates and
    out-of-range samples read zero.
    """
    features = Tensor._coerce(features)
    if features.ndim == 3:
        c, h, w = features.shape
        if params.scale.ndim != 1:
            raise ShapeError("unbatched features need unbatched parameters")
    elif features.ndim == 4:
        n, c, h, w = features.shape
        if params.scale.ndim != 2 or params.scale.shape[0] != n:
            raise ShapeError("batched features need parameters shaped [N,C]")
    else:
        raise ShapeError("features must be rank 3 or 4")
    if params.channels != c:
        raise ShapeError(
            f"parameter channel count {params.channels} does not match "
            f"feature channels {c}"
        )
    grid = adaat_grid(params, h, w, batch=features.shape[0] if features.ndim == 4 else None)
    return features.bilinear_sample(grid)
