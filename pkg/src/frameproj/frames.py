"""Fixed signal views: orthonormal Fourier basis and a Gabor/Morlet frame.

The Fourier view keeps the positive-frequency half of the unitary DFT in
polar form. The wavelet view is a scale x time magnitude scalogram computed
by direct summation with a truncated Gaussian-windowed complex exponential.
Both views are computed once per dataset and cached on disk.
"""

import dataclasses
import functools
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .binfmt import (
    read_exact,
    read_f64,
    read_shape,
    read_u32,
    write_f64,
    write_shape,
    write_u32,
)
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    NumericOverflowError,
    StaleCacheError,
)

logger = logging.getLogger(__name__)

MORLET_XI = 5.0 / (2.0 * np.pi)


@dataclass
class SignalBatch:
    """N x C x L raw windows with optional labels."""

    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    sample_rate: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 2:
            s = s[:, None, :]
        if s.ndim != 3:
            raise DimensionError(f"samples must be N x C x L, got shape {s.shape}")
        if s.shape[2] < 8:
            raise DimensionError(f"window length {s.shape[2]} is below the minimum of 8")
        if not np.isfinite(s).all():
            raise NumericOverflowError("samples contain non-finite values")
        self.samples = np.ascontiguousarray(s)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != s.shape[0]:
                raise DimensionError("one label per sample required")

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def channels(self):
        return self.samples.shape[1]

    @property
    def length(self):
        return self.samples.shape[2]

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return SignalBatch(self.samples[idx], labels, self.sample_rate)


@dataclass
class SpectralView:
    magnitudes: np.ndarray  # N x C x K
    phases: np.ndarray  # N x C x K, radians in (-pi, pi]

    @property
    def bins(self):
        return self.magnitudes.shape[-1]

    def subset(self, idx):
        return SpectralView(self.magnitudes[idx], self.phases[idx])


@dataclass
class ScalogramView:
    coefficients: np.ndarray  # N x C x S x L (magnitudes unless complex requested)
    scales: np.ndarray
    sigma: float = 1.0
    xi: float = MORLET_XI

    def subset(self, idx):
        return ScalogramView(self.coefficients[idx], self.scales, self.sigma, self.xi)


@dataclass
class FrameBoundReport:
    a_lower: float
    b_upper: float
    ratio: float
    n_probes: int


@dataclass
class TransformConfig:
    num_scales: int = 48
    scale_lo: float = 1.0
    scale_hi: float = 128.0
    sigma: float = 1.0
    xi: float = MORLET_XI
    truncation: float = 4.0
    magnitude: bool = True

    def scales(self):
        return morlet_scales(self.num_scales, self.scale_lo, self.scale_hi)

    def to_dict(self):
        return dataclasses.asdict(self)


# ----------------------------------------------------------------------
# Fourier basis


@functools.lru_cache(maxsize=32)
def _twiddles(length):
    k = np.arange(length)
    # reduce k*n modulo L before scaling so large products keep full precision
    phase = (np.outer(k, k) % length) * (-2.0 * np.pi / length)
    mat = np.exp(1j * phase) / np.sqrt(length)
    mat.setflags(write=False)
    return mat


def _dft_direct(x):
    return x @ _twiddles(x.shape[-1]).T


def _fft_radix2(x):
    """Iterative decimation-in-time FFT along the last axis (orthonormal)."""
    length = x.shape[-1]
    bits = length.bit_length() - 1
    idx = np.arange(length)
    rev = np.zeros(length, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = np.asarray(x, dtype=np.complex128)[..., rev]
    span = 1
    while span < length:
        w = np.exp(-1j * np.pi * np.arange(span) / span)
        a = a.reshape(a.shape[:-1] + (length // (2 * span), 2, span))
        even = a[..., 0, :]
        odd = a[..., 1, :] * w
        a = np.stack([even + odd, even - odd], axis=-2).reshape(a.shape[:-3] + (length,))
        span *= 2
    return a / np.sqrt(length)


def dft_ortho(x, full=False, method="auto"):
    """Unitary DFT of real signals along the last axis.

    Returns the ``floor(L/2) + 1`` non-negative frequency bins unless
    ``full`` is set. ``method`` is ``"direct"`` (precomputed twiddle
    matrix), ``"radix2"`` (power-of-two lengths only) or ``"auto"``.
    """
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    if length < 2:
        raise DimensionError("DFT needs at least two samples")
    if not np.isfinite(x).all():
        raise NumericOverflowError("DFT input contains non-finite values")
    pow2 = length & (length - 1) == 0
    if method == "auto":
        method = "radix2" if pow2 else "direct"
    if method == "radix2":
        if not pow2:
            raise DimensionError(f"radix-2 path needs a power-of-two length, got {length}")
        spec = _fft_radix2(x)
    elif method == "direct":
        spec = _dft_direct(x)
    else:
        raise ValueError(f"unknown DFT method {method!r}")
    return spec if full else spec[..., : length // 2 + 1]


def full_spectrum(half, length):
    """Rebuild the two-sided spectrum of a real signal from its positive bins."""
    half = np.asarray(half)
    k = np.arange(length // 2 + 1, length)
    return np.concatenate([half, np.conj(half[..., length - k])], axis=-1)


def to_polar(spectrum):
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    mag = np.abs(spectrum)
    phase = np.where(mag > 0, np.arctan2(spectrum.imag, spectrum.real), 0.0)
    # arctan2 returns -pi for (-x, -0.0); fold onto the half-open range (-pi, pi]
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return SpectralView(mag, phase)


def from_polar(view):
    return view.magnitudes * np.exp(1j * view.phases)


def spectral_view(batch):
    return to_polar(dft_ortho(batch.samples))


# ----------------------------------------------------------------------
# Gabor / Morlet frame


def morlet_scales(num=48, lo=1.0, hi=128.0):
    """Geometric grid from ``lo`` to ``hi`` with exact endpoints."""
    if num < 2 or not 0 < lo < hi:
        raise ContractError(f"invalid scale grid num={num}, lo={lo}, hi={hi}")
    scales = lo * (hi / lo) ** (np.arange(num) / (num - 1))
    scales[0], scales[-1] = lo, hi
    return scales


def gabor_wavelet(t, sigma=1.0, xi=MORLET_XI):
    """psi(t) = exp(-t^2 / (2 sigma^2)) exp(j 2 pi xi t)."""
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-t * t / (2.0 * sigma * sigma)) * np.exp(2j * np.pi * xi * t)


def gabor_cwt(batch, scales=None, sigma=1.0, xi=MORLET_XI, truncation=4.0, magnitude=True):
    """Wavelet coefficients W(a, b) for every scale a and every sample b.

    ``batch`` is a :class:`SignalBatch` (returns a :class:`ScalogramView`)
    or an array whose last axis is time (returns an array of shape
    ``batch_shape + (S, L)``). Coefficients are magnitudes unless
    ``magnitude`` is false, in which case they stay complex.
    """
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    scales = morlet_scales() if scales is None else np.asarray(scales, dtype=np.float64)
    x = batch.samples if isinstance(batch, SignalBatch) else np.asarray(batch, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericOverflowError("wavelet input contains non-finite values")
    length = x.shape[-1]
    radius = truncation * sigma
    if scales.max() * radius >= 8 * length:
        logger.warning("largest wavelet support %.1f exceeds 8x the window length %d",
                       scales.max() * radius, length)
    coeffs = kernels.cwt_direct(x.reshape(-1, length), scales, sigma, xi, radius)
    coeffs = coeffs.reshape(x.shape[:-1] + (len(scales), length))
    coeffs = np.abs(coeffs) if magnitude else coeffs
    if isinstance(batch, SignalBatch):
        return ScalogramView(coeffs, scales, sigma, xi)
    return coeffs


def scalogram_view(batch, cfg=None):
    cfg = cfg or TransformConfig()
    return gabor_cwt(batch, cfg.scales(), cfg.sigma, cfg.xi, cfg.truncation, cfg.magnitude)


def compute_views(batch, cfg=None):
    return spectral_view(batch), scalogram_view(batch, cfg)


# ----------------------------------------------------------------------
# frame properties


def verify_parseval(batch):
    """Per-sample ratio of full-spectrum DFT energy to signal energy."""
    x = batch.samples if isinstance(batch, SignalBatch) else np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    spec = dft_ortho(x, full=True)
    axes = tuple(range(1, x.ndim))
    num = (np.abs(spec) ** 2).sum(axis=axes)
    den = (x * x).sum(axis=axes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)


def estimate_frame_bounds(scales, sigma, xi, probes, truncation=4.0):
    """Empirical frame bounds of the sampled wavelet system over probe signals.

    Each probe row is rescaled to unit norm; the bounds are the extreme
    values of the total coefficient energy over the probes.
    """
    x = probes.samples if isinstance(probes, SignalBatch) else np.asarray(probes, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    norms = np.sqrt((x * x).sum(axis=1))
    if (norms <= 1e-12).any():
        raise ContractError("probe signals must have non-zero norm")
    x = x / norms[:, None]
    w = gabor_cwt(x, scales, sigma, xi, truncation, magnitude=False)
    energy = (np.abs(w) ** 2).sum(axis=(1, 2))
    a, b = float(energy.min()), float(energy.max())
    return FrameBoundReport(a_lower=a, b_upper=b, ratio=b / a, n_probes=len(energy))


# ----------------------------------------------------------------------
# view cache

CACHE_MAGIC = b"FPVC"
CACHE_VERSION = 1
KIND_SPECTRAL = 1
KIND_SCALOGRAM = 2


def view_cache_key(batch, cfg):
    """SHA-256 over the raw samples, their shape and the transform settings."""
    h = hashlib.sha256()
    x = np.ascontiguousarray(batch.samples, dtype="<f8")
    h.update(json.dumps(list(x.shape)).encode())
    h.update(x.tobytes())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    return h.digest()


def _write_view(path, key, kind, payload):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        write_u32(fh, CACHE_VERSION)
        fh.write(key)
        write_u32(fh, kind)
        write_shape(fh, payload.shape)
        write_f64(fh, payload)
    os.replace(tmp, path)


def _read_view(path, kind):
    with open(path, "rb") as fh:
        if read_exact(fh, 4) != CACHE_MAGIC:
            raise FormatError(f"{path}: not a view cache file")
        version = read_u32(fh)
        if version != CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        key = read_exact(fh, 32)
        got = read_u32(fh)
        if got != kind:
            raise FormatError(f"{path}: view kind {got}, expected {kind}")
        payload = read_f64(fh, read_shape(fh))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return key, payload


def cache_views(batch, path, cfg=None, views=None):
    """Compute (or take) both views and store them under directory ``path``.

    Returns ``(spectral, scalogram, key)``.
    """
    cfg = cfg or TransformConfig()
    spec, scal = views if views is not None else compute_views(batch, cfg)
    key = view_cache_key(batch, cfg)
    os.makedirs(path, exist_ok=True)
    _write_view(os.path.join(path, "spectral.fpvc"), key, KIND_SPECTRAL,
                np.stack([spec.magnitudes, spec.phases]))
    coeffs = scal.coefficients
    if np.iscomplexobj(coeffs):
        coeffs = np.stack([coeffs.real, coeffs.imag])
    _write_view(os.path.join(path, "scalogram.fpvc"), key, KIND_SCALOGRAM, coeffs)
    with open(os.path.join(path, "transform.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    return spec, scal, key


def load_views(path, batch=None, cfg=None):
    """Reload cached views; with ``batch`` given the content key must match.

    Raises :class:`StaleCacheError` when the stored key differs from the key
    of ``(batch, cfg)`` and :class:`FormatError` for damaged files.
    """
    if cfg is None:
        with open(os.path.join(path, "transform.json")) as fh:
            cfg = TransformConfig(**json.load(fh))
    key_s, spec = _read_view(os.path.join(path, "spectral.fpvc"), KIND_SPECTRAL)
    key_w, coeffs = _read_view(os.path.join(path, "scalogram.fpvc"), KIND_SCALOGRAM)
    if key_s != key_w:
        raise StaleCacheError("spectral and scalogram caches were built from different inputs")
    if batch is not None and view_cache_key(batch, cfg) != key_s:
        raise StaleCacheError("cached views do not match this dataset/transform configuration")
    if spec.ndim != 4 or spec.shape[0] != 2:
        raise FormatError("spectral payload must have shape (2, N, C, K)")
    if coeffs.ndim == 5:
        coeffs = coeffs[0] + 1j * coeffs[1]
    scales = cfg.scales()
    if coeffs.shape[-2] != len(scales):
        raise StaleCacheError("scalogram scale count differs from the transform configuration")
    return (SpectralView(spec[0], spec[1]),
            ScalogramView(coeffs, scales, cfg.sigma, cfg.xi),
            key_s)
