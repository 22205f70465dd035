"""Pure-numpy fallback for the hot kernels.

Same contracts as the compiled ``_fast`` extension: stride-1 same-size
convolution with zero padding, and bilinear grid sampling with zero reads
outside the image. Convolution goes through im2col + BLAS; sampling is
vectorized gather/scatter. Summation order differs from the compiled lane,
so cross-lane agreement is to rounding error, not bitwise.
"""

import numpy as np

# Sampling coordinates this close to an integer are treated as exact, so
# identity grids, pure translations, and R=pi rotations stay bit-exact.
SNAP_EPS = 1e-9


def _im2col(x, k):
    n, c, h, w = x.shape
    p = k // 2
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=np.float64)
    xp[:, :, p:p + h, p:p + w] = x
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, c, k, k, h, w), (s[0], s[1], s[2], s[3], s[2], s[3]))
    return view.transpose(0, 4, 5, 1, 2, 3).reshape(n * h * w, c * k * k)


def conv2d_forward(x, w):
    n, _, h, wd = x.shape
    co = w.shape[0]
    k = w.shape[2]
    col = _im2col(x, k)
    y = col @ w.reshape(co, -1).T
    return np.ascontiguousarray(y.reshape(n, h, wd, co).transpose(0, 3, 1, 2))


def conv2d_grad_input(gy, w):
    # Input gradient of a same-padding conv is the conv of gy with the
    # spatially flipped, channel-transposed kernels.
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(gy, wt)


def conv2d_grad_weight(x, gy, k):
    n, ci, h, wd = x.shape
    co = gy.shape[1]
    col = _im2col(x, k)
    gym = gy.transpose(0, 2, 3, 1).reshape(n * h * wd, co)
    return (gym.T @ col).reshape(co, ci, k, k)


def _pixel_coords(grid, h, w):
    px = (grid[..., 0] + 1.0) * (0.5 * (w - 1))
    py = (grid[..., 1] + 1.0) * (0.5 * (h - 1))
    rx = np.rint(px)
    ry = np.rint(py)
    px = np.where(np.abs(px - rx) < SNAP_EPS, rx, px)
    py = np.where(np.abs(py - ry) < SNAP_EPS, ry, py)
    return px, py


def _corners(x, px, py):
    """Gather the four interpolation corners, zeroing out-of-range reads."""
    n, c, h, w = x.shape
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    ni = np.arange(n).reshape(n, 1, 1, 1)
    ci = np.arange(c).reshape(1, c, 1, 1)
    vals = {}
    idxs = {}
    for dy in (0, 1):
        for dx in (0, 1):
            ix = x0 + dx
            iy = y0 + dy
            ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            ixc = np.clip(ix, 0, w - 1)
            iyc = np.clip(iy, 0, h - 1)
            vals[dy, dx] = x[ni, ci, iyc, ixc] * ok
            idxs[dy, dx] = (ok, ixc, iyc)
    return x0, y0, fx, fy, vals, idxs, ni, ci


def bilinear_forward(x, grid):
    n, c, h, w = x.shape
    px, py = _pixel_coords(grid, h, w)
    _, _, fx, fy, vals, _, _, _ = _corners(x, px, py)
    out = ((1.0 - fy) * ((1.0 - fx) * vals[0, 0] + fx * vals[0, 1])
           + fy * ((1.0 - fx) * vals[1, 0] + fx * vals[1, 1]))
    return np.ascontiguousarray(out)


def bilinear_backward(x, grid, gy):
    n, c, h, w = x.shape
    g = grid.shape[1]
    px, py = _pixel_coords(grid, h, w)
    _, _, fx, fy, vals, idxs, ni, ci = _corners(x, px, py)

    wgt = {
        (0, 0): (1.0 - fy) * (1.0 - fx),
        (0, 1): (1.0 - fy) * fx,
        (1, 0): fy * (1.0 - fx),
        (1, 1): fy * fx,
    }
    gx = np.zeros(n * c * h * w, dtype=np.float64)
    full = (n, c) + px.shape[2:]
    for key, (ok, ixc, iyc) in idxs.items():
        contrib = gy * wgt[key] * ok
        flat = ((np.broadcast_to(ni, full) * c + np.broadcast_to(ci, full)) * h
                + np.broadcast_to(iyc, full)) * w + np.broadcast_to(ixc, full)
        gx += np.bincount(flat.ravel(), weights=contrib.ravel(),
                          minlength=n * c * h * w)
    gx = gx.reshape(n, c, h, w)

    dpx = (1.0 - fy) * (vals[0, 1] - vals[0, 0]) + fy * (vals[1, 1] - vals[1, 0])
    dpy = (1.0 - fx) * (vals[1, 0] - vals[0, 0]) + fx * (vals[1, 1] - vals[0, 1])
    gpx = gy * dpx * (0.5 * (w - 1))
    gpy = gy * dpy * (0.5 * (h - 1))
    if g == 1 and c > 1:
        gpx = gpx.sum(axis=1, keepdims=True)
        gpy = gpy.sum(axis=1, keepdims=True)
    ggrid = np.stack([gpx, gpy], axis=-1)
    return gx, np.ascontiguousarray(ggrid)
