# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Convolutions are lowered to patch matrices (im2col / col2im in C) followed
by a BLAS product; the wavelet transform is a direct windowed summation.
Loop order is fixed, so output is identical from run to run.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin, sqrt, M_PI

cnp.import_array()


cdef inline Py_ssize_t _out_len(Py_ssize_t n, Py_ssize_t k, Py_ssize_t s, Py_ssize_t p):
    return (n + 2 * p - k) // s + 1


def im2col(const double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    """Patch matrix of shape (N, Cin*KH*KW, Ho*Wo); padding reads as zero."""
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = _out_len(h, kh, sh, ph), wo = _out_len(wd, kw, sw, pw)
    out = np.zeros((n, cin * kh * kw, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] col = out
    cdef Py_ssize_t b, ci, i, j, oh, ow, ih, iw, row, ow_lo, ow_hi
    for b in range(n):
        for ci in range(cin):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    # ow range with 0 <= ow*sw - pw + j < wd
                    ow_lo = 0
                    if pw - j > 0:
                        ow_lo = (pw - j + sw - 1) // sw
                    ow_hi = (wd - 1 + pw - j) // sw
                    if ow_hi > wo - 1:
                        ow_hi = wo - 1
                    for oh in range(ho):
                        ih = oh * sh - ph + i
                        if ih < 0 or ih >= h:
                            continue
                        for ow in range(ow_lo, ow_hi + 1):
                            col[b, row, oh * wo + ow] = x[b, ci, ih, ow * sw - pw + j]
    return out


def col2im(const double[:, :, ::1] col, Py_ssize_t cin, Py_ssize_t h, Py_ssize_t wd,
           Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    """Adjoint of :func:`im2col`: scatter-add patches back onto the input grid."""
    cdef Py_ssize_t n = col.shape[0]
    cdef Py_ssize_t ho = _out_len(h, kh, sh, ph), wo = _out_len(wd, kw, sw, pw)
    out = np.zeros((n, cin, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t b, ci, i, j, oh, ow, ih, row, ow_lo, ow_hi
    for b in range(n):
        for ci in range(cin):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    ow_lo = 0
                    if pw - j > 0:
                        ow_lo = (pw - j + sw - 1) // sw
                    ow_hi = (wd - 1 + pw - j) // sw
                    if ow_hi > wo - 1:
                        ow_hi = wo - 1
                    for oh in range(ho):
                        ih = oh * sh - ph + i
                        if ih < 0 or ih >= h:
                            continue
                        for ow in range(ow_lo, ow_hi + 1):
                            x[b, ci, ih, ow * sw - pw + j] += col[b, row, oh * wo + ow]
    return out


def conv2d_forward(x, w, Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = _out_len(h, kh, sh, ph), wo = _out_len(wd, kw, sw, pw)
    cols = im2col(x, kh, kw, sh, sw, ph, pw)
    return np.matmul(w.reshape(cout, -1), cols).reshape(n, cout, ho, wo)


def conv2d_backward_input(gy, w, Py_ssize_t h, Py_ssize_t wd,
                          Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t n = gy.shape[0], cout = gy.shape[1]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    dcols = np.matmul(w.reshape(cout, -1).T, gy.reshape(n, cout, -1))
    return col2im(np.ascontiguousarray(dcols), cin, h, wd, kh, kw, sh, sw, ph, pw)


def conv2d_backward_weight(x, gy, Py_ssize_t kh, Py_ssize_t kw,
                           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], cout = gy.shape[1]
    cols = im2col(x, kh, kw, sh, sw, ph, pw)
    gw = np.tensordot(gy.reshape(n, cout, -1), cols, axes=([0, 2], [0, 2]))
    return gw.reshape(cout, cin, kh, kw)


def cwt_direct(const double[:, ::1] x, const double[::1] scales,
               double sigma, double xi, double radius):
    cdef Py_ssize_t m = x.shape[0], length = x.shape[1], ns = scales.shape[0]
    out = np.zeros((m, ns, length), dtype=np.complex128)
    cdef double complex[:, :, ::1] res = out
    cdef Py_ssize_t r, s, b, k, half, lo, hi, nn
    cdef double a, t, env, norm, re, im
    cdef double[::1] tre, tim
    for s in range(ns):
        a = scales[s]
        half = <Py_ssize_t>(radius * a) + 1
        tre = np.zeros(2 * half + 1)
        tim = np.zeros(2 * half + 1)
        norm = 1.0 / sqrt(a)
        for k in range(-half, half + 1):
            t = k / a
            if t > radius or t < -radius:
                continue
            env = exp(-t * t / (2.0 * sigma * sigma)) * norm
            # conj(psi(t)) = env * (cos(2 pi xi t) - i sin(2 pi xi t)); t = (n - b) / a
            tre[k + half] = env * cos(2.0 * M_PI * xi * t)
            tim[k + half] = -env * sin(2.0 * M_PI * xi * t)
        for r in range(m):
            for b in range(length):
                lo = b - half
                if lo < 0:
                    lo = 0
                hi = b + half
                if hi > length - 1:
                    hi = length - 1
                re = 0.0
                im = 0.0
                for nn in range(lo, hi + 1):
                    re += x[r, nn] * tre[nn - b + half]
                    im += x[r, nn] * tim[nn - b + half]
                res[r, s, b] = re + 1j * im
    return out
