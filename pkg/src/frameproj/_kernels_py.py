"""Pure numpy implementations of the hot kernels.

Every function here has a twin in the compiled ``_ckernels`` module with the
same signature. All arrays are float64 (complex128 for the wavelet output)
and C-contiguous. Loops run over kernel taps only, so the reduction order is
fixed and results are reproducible bit-for-bit.
"""

import numpy as np


def _out_len(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, sh, sw, ph, pw):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = _out_len(h, kh, sh, ph)
    wo = _out_len(wd, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    y = np.zeros((n, cout, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            # (n, cin, ho, wo) x (cout, cin) -> (n, ho, wo, cout)
            y += np.tensordot(patch, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    return y


def conv2d_backward_input(gy, w, h, wd, sh, sw, ph, pw):
    n, cout, ho, wo = gy.shape
    _, cin, kh, kw = w.shape
    gxp = np.zeros((n, cin, h + 2 * ph, wd + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gy, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            gxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += contrib
    return np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + wd])


def conv2d_backward_weight(x, gy, kh, kw, sh, sw, ph, pw):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = gy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    gw = np.empty((cout, cin, kh, kw))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            gw[:, :, i, j] = np.tensordot(gy, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def wavelet_operator(length, scale, sigma, xi, radius):
    """Dense matrix M with W[b] = sum_n M[b, n] x[n] for one scale."""
    b = np.arange(length)
    t = (b[None, :] - b[:, None]) / scale
    taps = np.exp(-t * t / (2.0 * sigma * sigma)) * np.exp(-2j * np.pi * xi * t)
    taps[np.abs(t) > radius] = 0.0
    return taps / np.sqrt(scale)


def cwt_direct(x, scales, sigma, xi, radius):
    m, length = x.shape
    out = np.empty((m, len(scales), length), dtype=np.complex128)
    for s, a in enumerate(scales):
        op = wavelet_operator(length, a, sigma, xi, radius)
        out[:, s, :] = x @ op.T
    return out
