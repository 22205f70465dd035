# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: stride-1 zero-padded convolution and bilinear
grid sampling, forward and backward.

Convolutions run as im2col (plain row memcpy into a [C*k*k, H*W] scratch
matrix) followed by a BLAS dgemm, so the multiply-accumulate work happens
at full BLAS speed while padding and layout stay in tight C loops. BLAS
runs single-threaded here (the package pins the thread env vars), so the
accumulation order is fixed and results are bit-reproducible run to run.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, fabs
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

DEF SNAP_EPS = 1e-9


cdef void _im2col(const double* xb, double* col, Py_ssize_t ci, Py_ssize_t h,
                  Py_ssize_t wd, Py_ssize_t k) noexcept nogil:
    """Fill col[(c*k+ky)*k+kx, r*wd+q] = xb[c, r+ky-p, q+kx-p], zero pad."""
    cdef Py_ssize_t p = k // 2, hw = h * wd
    cdef Py_ssize_t c, ky, kx, dy, dx, r, r0, r1, q0, q1
    cdef double* dst
    cdef const double* src
    memset(col, 0, ci * k * k * hw * sizeof(double))
    for c in range(ci):
        for ky in range(k):
            dy = ky - p
            r0 = -dy if dy < 0 else 0
            r1 = h - dy if dy > 0 else h
            for kx in range(k):
                dx = kx - p
                q0 = -dx if dx < 0 else 0
                q1 = wd - dx if dx > 0 else wd
                dst = col + ((c * k + ky) * k + kx) * hw
                for r in range(r0, r1):
                    src = xb + (c * h + r + dy) * wd + q0 + dx
                    memcpy(dst + r * wd + q0, src, (q1 - q0) * sizeof(double))


cdef void _col2im(const double* col, double* xb, Py_ssize_t ci, Py_ssize_t h,
                  Py_ssize_t wd, Py_ssize_t k) noexcept nogil:
    """Scatter-add the im2col layout back onto the padded input positions."""
    cdef Py_ssize_t p = k // 2, hw = h * wd
    cdef Py_ssize_t c, ky, kx, dy, dx, r, q, r0, r1, q0, q1
    cdef const double* src
    cdef double* dst
    for c in range(ci):
        for ky in range(k):
            dy = ky - p
            r0 = -dy if dy < 0 else 0
            r1 = h - dy if dy > 0 else h
            for kx in range(k):
                dx = kx - p
                q0 = -dx if dx < 0 else 0
                q1 = wd - dx if dx > 0 else wd
                src = col + ((c * k + ky) * k + kx) * hw
                for r in range(r0, r1):
                    dst = xb + (c * h + r + dy) * wd + dx
                    for q in range(q0, q1):
                        dst[q] += src[r * wd + q]


def conv2d_forward(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=4] w):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t hw = h * wd, ckk = ci * k * k
    cdef cnp.ndarray[double, ndim=4] y = np.empty((n, co, h, wd), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] col = np.empty((ckk, hw), dtype=np.float64)
    cdef double* xp = <double*> x.data
    cdef double* wp = <double*> w.data
    cdef double* yp = <double*> y.data
    cdef double* cp = <double*> col.data
    cdef int m_ = <int> hw, n_ = <int> co, k_ = <int> ckk
    cdef double one = 1.0, zero = 0.0
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            _im2col(xp + b * ci * hw, cp, ci, h, wd, k)
            # y_b = W2 [co, ckk] @ col [ckk, hw], via Fortran-view transpose
            dgemm("N", "N", &m_, &n_, &k_, &one, cp, &m_, wp, &k_,
                  &zero, yp + b * co * hw, &m_)
    return y


def conv2d_grad_input(cnp.ndarray[double, ndim=4] gy, cnp.ndarray[double, ndim=4] w):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], h = gy.shape[2], wd = gy.shape[3]
    cdef Py_ssize_t ci = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t hw = h * wd, ckk = ci * k * k
    cdef cnp.ndarray[double, ndim=4] gx = np.zeros((n, ci, h, wd), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] col = np.empty((ckk, hw), dtype=np.float64)
    cdef double* gyp = <double*> gy.data
    cdef double* wp = <double*> w.data
    cdef double* gxp = <double*> gx.data
    cdef double* cp = <double*> col.data
    cdef int m_ = <int> hw, n_ = <int> ckk, k_ = <int> co, ldb = <int> ckk
    cdef double one = 1.0, zero = 0.0
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            # col = W2^T [ckk, co] @ gy_b [co, hw], then scatter back
            dgemm("N", "T", &m_, &n_, &k_, &one, gyp + b * co * hw, &m_,
                  wp, &ldb, &zero, cp, &m_)
            _col2im(cp, gxp + b * ci * hw, ci, h, wd, k)
    return gx


def conv2d_grad_weight(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=4] gy, Py_ssize_t k):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = gy.shape[1]
    cdef Py_ssize_t hw = h * wd, ckk = ci * k * k
    cdef cnp.ndarray[double, ndim=4] gw = np.zeros((co, ci, k, k), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] col = np.empty((ckk, hw), dtype=np.float64)
    cdef double* xp = <double*> x.data
    cdef double* gyp = <double*> gy.data
    cdef double* gwp = <double*> gw.data
    cdef double* cp = <double*> col.data
    cdef int m_ = <int> ckk, n_ = <int> co, k_ = <int> hw
    cdef double one = 1.0
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            _im2col(xp + b * ci * hw, cp, ci, h, wd, k)
            # gw2 += gy_b [co, hw] @ col^T [hw, ckk], accumulated over batch
            dgemm("T", "N", &m_, &n_, &k_, &one, cp, &k_,
                  gyp + b * co * hw, &k_, &one, gwp, &m_)
    return gw


cdef inline double _snap(double v) noexcept nogil:
    cdef double r = floor(v + 0.5)
    if fabs(v - r) < SNAP_EPS:
        return r
    return v


def bilinear_forward(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=5] grid):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t g = grid.shape[1], hg = grid.shape[2], wg = grid.shape[3]
    cdef cnp.ndarray[double, ndim=4] y = np.zeros((n, c, hg, wg), dtype=np.float64)
    cdef double[:, :, :, :] xv = x, yv = y
    cdef double[:, :, :, :, :] gv = grid
    cdef Py_ssize_t b, ch, gi, r, q, x0, y0
    cdef double px, py, fx, fy, v00, v01, v10, v11
    cdef double hx = 0.5 * (wd - 1), hy = 0.5 * (h - 1)
    for b in range(n):
        for ch in range(c):
            gi = ch if g > 1 else 0
            for r in range(hg):
                for q in range(wg):
                    px = _snap((gv[b, gi, r, q, 0] + 1.0) * hx)
                    py = _snap((gv[b, gi, r, q, 1] + 1.0) * hy)
                    x0 = <Py_ssize_t>floor(px)
                    y0 = <Py_ssize_t>floor(py)
                    fx = px - floor(px)
                    fy = py - floor(py)
                    v00 = xv[b, ch, y0, x0] if 0 <= y0 < h and 0 <= x0 < wd else 0.0
                    v01 = xv[b, ch, y0, x0 + 1] if 0 <= y0 < h and 0 <= x0 + 1 < wd else 0.0
                    v10 = xv[b, ch, y0 + 1, x0] if 0 <= y0 + 1 < h and 0 <= x0 < wd else 0.0
                    v11 = xv[b, ch, y0 + 1, x0 + 1] if 0 <= y0 + 1 < h and 0 <= x0 + 1 < wd else 0.0
                    yv[b, ch, r, q] = ((1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                                       + fy * ((1.0 - fx) * v10 + fx * v11))
    return y


def bilinear_backward(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=5] grid,
                      cnp.ndarray[double, ndim=4] gy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t g = grid.shape[1], hg = grid.shape[2], wg = grid.shape[3]
    cdef cnp.ndarray[double, ndim=4] gx = np.zeros((n, c, h, wd), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=5] ggrid = np.zeros((n, g, hg, wg, 2), dtype=np.float64)
    cdef double[:, :, :, :] xv = x, gxv = gx, gyv = gy
    cdef double[:, :, :, :, :] gv = grid, ggv = ggrid
    cdef Py_ssize_t b, ch, gi, r, q, x0, y0
    cdef double px, py, fx, fy, v00, v01, v10, v11, go, dpx, dpy
    cdef double hx = 0.5 * (wd - 1), hy = 0.5 * (h - 1)
    for b in range(n):
        for ch in range(c):
            gi = ch if g > 1 else 0
            for r in range(hg):
                for q in range(wg):
                    px = _snap((gv[b, gi, r, q, 0] + 1.0) * hx)
                    py = _snap((gv[b, gi, r, q, 1] + 1.0) * hy)
                    x0 = <Py_ssize_t>floor(px)
                    y0 = <Py_ssize_t>floor(py)
                    fx = px - floor(px)
                    fy = py - floor(py)
                    go = gyv[b, ch, r, q]
                    v00 = 0.0
                    v01 = 0.0
                    v10 = 0.0
                    v11 = 0.0
                    if 0 <= y0 < h and 0 <= x0 < wd:
                        v00 = xv[b, ch, y0, x0]
                        gxv[b, ch, y0, x0] += go * (1.0 - fy) * (1.0 - fx)
                    if 0 <= y0 < h and 0 <= x0 + 1 < wd:
                        v01 = xv[b, ch, y0, x0 + 1]
                        gxv[b, ch, y0, x0 + 1] += go * (1.0 - fy) * fx
                    if 0 <= y0 + 1 < h and 0 <= x0 < wd:
                        v10 = xv[b, ch, y0 + 1, x0]
                        gxv[b, ch, y0 + 1, x0] += go * fy * (1.0 - fx)
                    if 0 <= y0 + 1 < h and 0 <= x0 + 1 < wd:
                        v11 = xv[b, ch, y0 + 1, x0 + 1]
                        gxv[b, ch, y0 + 1, x0 + 1] += go * fy * fx
                    dpx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
                    dpy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01)
                    ggv[b, gi, r, q, 0] += go * dpx * hx
                    ggv[b, gi, r, q, 1] += go * dpy * hy
    return gx, ggrid
