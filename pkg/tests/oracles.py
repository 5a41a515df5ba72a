"""Independent reference implementations written as plain loops.

Nothing here imports the package; each function follows the textbook
definition as literally as possible so it can serve as a test oracle.
"""

import cmath
import math

import numpy as np


def dft_loop(x):
    """Orthonormal DFT, all L bins, by direct O(L^2) summation."""
    x = [float(v) for v in x]
    n = len(x)
    out = []
    for k in range(n):
        acc = 0j
        for t in range(n):
            acc += x[t] * cmath.exp(-2j * math.pi * k * t / n)
        out.append(acc / math.sqrt(n))
    return np.array(out)


def morlet(t, sigma, xi):
    return math.exp(-t * t / (2 * sigma * sigma)) * cmath.exp(2j * math.pi * xi * t)


def cwt_loop(x, scales, sigma, xi, truncation=4.0):
    """Complex coefficients W[a, b] = a^-1/2 sum_n x[n] conj(psi((n - b)/a)), |t| <= truncation*sigma."""
    x = [float(v) for v in x]
    n = len(x)
    out = np.zeros((len(scales), n), dtype=complex)
    for si, a in enumerate(scales):
        for b in range(n):
            acc = 0j
            for m in range(n):
                t = (m - b) / a
                if abs(t) <= truncation * sigma:
                    acc += x[m] * morlet(t, sigma, xi).conjugate()
            out[si, b] = acc / math.sqrt(a)
    return out


def conv1d_loop(x, w, bias, stride, padding):
    """Cross-correlation of (N, Cin, L) with (Cout, Cin, K)."""
    n, cin, length = x.shape
    cout, _, k = w.shape
    lout = (length + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, lout))
    for b in range(n):
        for o in range(cout):
            for j in range(lout):
                acc = 0.0 if bias is None else bias[o]
                for c in range(cin):
                    for q in range(k):
                        pos = j * stride + q - padding
                        if 0 <= pos < length:
                            acc += x[b, c, pos] * w[o, c, q]
                out[b, o, j] = acc
    return out


def conv_transpose1d_loop(x, w, bias, stride, padding, output_padding):
    """Scatter form of the transposed convolution; w has shape (Cin, Cout, K)."""
    n, cin, length = x.shape
    _, cout, k = w.shape
    lout = (length - 1) * stride - 2 * padding + k + output_padding
    out = np.zeros((n, cout, lout))
    for b in range(n):
        for c in range(cin):
            for i in range(length):
                for q in range(k):
                    pos = i * stride + q - padding
                    if 0 <= pos < lout:
                        for o in range(cout):
                            out[b, o, pos] += x[b, c, i] * w[c, o, q]
    if bias is not None:
        out += np.asarray(bias)[None, :, None]
    return out


def _cos(u, v):
    return sum(a * b for a, b in zip(u, v)) / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))


def ntxent_loop(za, zb, tau, include_positive=True):
    """Per-anchor NT-Xent with anchors from ``za`` and candidates from ``zb``."""
    n = len(za)
    out = []
    for i in range(n):
        pos = math.exp(_cos(za[i], zb[i]) / tau)
        neg = sum(math.exp(_cos(za[i], zb[k]) / tau) for k in range(n) if k != i)
        denom = pos + neg if include_positive else neg
        out.append(-math.log(pos / denom))
    return np.array(out)


def instance_discrimination_loop(z_t, z_f, z_w, tau, include_positive=True):
    zs = {"t": z_t, "F": z_f, "W": z_w}
    total = 0.0
    for a, b in (("t", "F"), ("t", "W"), ("F", "W")):
        n = len(zs[a])
        fwd = ntxent_loop(zs[a], zs[b], tau, include_positive)
        bwd = ntxent_loop(zs[b], zs[a], tau, include_positive)
        total += (fwd.sum() + bwd.sum()) / (2 * n)
    return total


def l1_mapping_loop(pred_f, target_f, pred_w, target_w):
    n = len(pred_f)
    acc = 0.0
    for i in range(n):
        acc += sum(abs(p - t) for p, t in zip(pred_f[i], target_f[i]))
        acc += sum(abs(p - t) for p, t in zip(pred_w[i], target_w[i]))
    return acc / n


def classification_from_counts(cm):
    """Accuracy, per-class F1, macro/weighted F1 and kappa from a confusion matrix."""
    k = len(cm)
    total = sum(sum(r) for r in cm)
    f1 = []
    for c in range(k):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(k)) - tp
        fn = sum(cm[c]) - tp
        f1.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    support = [sum(cm[c]) for c in range(k)]
    predicted = [sum(cm[r][c] for r in range(k)) for c in range(k)]
    p_o = sum(cm[c][c] for c in range(k)) / total
    p_e = sum(support[c] * predicted[c] for c in range(k)) / total**2
    return {
        "accuracy": p_o,
        "per_class_f1": f1,
        "macro_f1": sum(f1) / k,
        "weighted_f1": sum(f * s for f, s in zip(f1, support)) / total,
        "kappa": (p_o - p_e) / (1 - p_e),
    }
