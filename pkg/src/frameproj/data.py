"""Synthetic datasets, windowing, normalization and dataset files.

Randomness comes from numpy's Philox counter-based generator, one stream per
sample keyed by ``(seed, sample index)``, so a sample's values do not depend
on how many other samples are generated or in what order.
"""

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .binfmt import (
    read_exact,
    read_f64,
    read_text_block,
    read_u8,
    read_u32,
    write_f64,
    write_text_block,
    write_u8,
    write_u32,
)
from .errors import ConfigError, ContractError, FormatError
from .frames import SignalBatch

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Philox(key=(seed << 64) | stream)"

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
LABEL_NONE, LABEL_CLASS, LABEL_TARGET = 0, 1, 2


def philox(seed, stream=0):
    """Generator for stream ``stream`` of ``seed``; both must fit in 64 bits."""
    if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
        raise ConfigError("seed and stream must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(stream)))


@dataclass
class SyntheticConfig:
    n_classes: int = 3
    samples_per_class: int = 200
    length: int = 128
    sample_rate: float = 32.0
    class_frequencies: list = field(default_factory=lambda: [[3.0], [6.0], [10.0]])
    transients: bool = True
    transient_widths: list = field(default_factory=lambda: [2.0, 6.0, 18.0])
    transient_amplitude: float = 1.5
    transient_jitter: float = 0.25
    noise_std: float = 0.1
    normalize: bool = True
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])

    def validate(self):
        if self.n_classes < 1 or self.samples_per_class < 1:
            raise ConfigError("need at least one class and one sample per class")
        if self.length < 8:
            raise ConfigError("window length must be at least 8")
        if len(self.class_frequencies) != self.n_classes:
            raise ConfigError("one frequency set per class required")
        sets = [tuple(sorted(f)) for f in self.class_frequencies]
        if len(set(sets)) != len(sets):
            raise ConfigError("class frequency sets must be pairwise distinct")
        nyq = self.sample_rate / 2.0
        for freqs in self.class_frequencies:
            for f in freqs:
                if not 0 < f < nyq:
                    raise ConfigError(f"frequency {f} Hz violates Nyquist limit {nyq} Hz")
        if self.transients and len(self.transient_widths) != self.n_classes:
            raise ConfigError("one transient width per class required")
        _check_split(self.split)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RegressionConfig:
    n_samples: int = 600
    length: int = 128
    sample_rate: float = 32.0
    band: list = field(default_factory=lambda: [1.0, 3.0])
    harmonics: list = field(default_factory=lambda: [0.5, 0.25])
    noise_std: float = 0.1
    target_scale: float = 1.0
    normalize: bool = True
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])

    def validate(self):
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ConfigError("band must satisfy 0 < lo < hi")
        top = hi * (len(self.harmonics) + 1)
        if top >= self.sample_rate / 2.0:
            raise ConfigError(f"highest harmonic {top} Hz violates Nyquist limit {self.sample_rate / 2} Hz")
        _check_split(self.split)

    def to_dict(self):
        return dataclasses.asdict(self)


def _check_split(split):
    if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError("split must be three non-negative fractions summing to 1")


@dataclass
class LabeledDataset:
    batch: SignalBatch
    label_kind: int = LABEL_NONE
    splits: Optional[np.ndarray] = None
    manifest: dict = field(default_factory=dict)

    @property
    def labels(self):
        return self.batch.labels

    def split(self, which):
        if self.splits is None:
            raise ContractError("dataset has no split assignment")
        idx = np.flatnonzero(self.splits == which)
        return self.batch.subset(idx)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.batch.samples, dtype="<f8").tobytes())
        if self.batch.labels is not None:
            h.update(np.ascontiguousarray(self.batch.labels).tobytes())
        if self.splits is not None:
            h.update(self.splits.astype(np.uint8).tobytes())
        return h.hexdigest()


def _assign_splits(groups, fractions, seed):
    """Stratified split: each group is shuffled and cut by the fractions."""
    splits = np.zeros(sum(len(g) for g in groups), dtype=np.uint8)
    for gi, members in enumerate(groups):
        members = np.asarray(members)
        order = philox(seed, 2**63 + gi).permutation(len(members))
        n = len(members)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_val = min(n_val, n - n_train)
        splits[members[order[n_train:n_train + n_val]]] = SPLIT_VAL
        splits[members[order[n_train + n_val:]]] = SPLIT_TEST
    return splits


def generate_synthetic_classification(cfg, seed):
    """Sinusoid mixtures with a class-specific transient burst plus noise.

    Sample ``i`` belongs to class ``i % n_classes``. Each sample sums unit
    sinusoids at its class frequencies with random phases, adds one
    Gaussian bump of class-specific width at a jittered center with random
    sign, and adds white Gaussian noise.
    """
    cfg.validate()
    n = cfg.n_classes * cfg.samples_per_class
    t = np.arange(cfg.length)
    x = np.empty((n, 1, cfg.length))
    labels = np.arange(n) % cfg.n_classes
    for i in range(n):
        rng = philox(seed, i)
        c = labels[i]
        sig = np.zeros(cfg.length)
        for f in cfg.class_frequencies[c]:
            sig += np.sin(2 * np.pi * f * t / cfg.sample_rate + rng.uniform(0, 2 * np.pi))
        if cfg.transients:
            center = cfg.length / 2 + cfg.transient_jitter * cfg.length * rng.uniform(-1, 1)
            width = cfg.transient_widths[c]
            sign = 1.0 if rng.random() < 0.5 else -1.0
            sig += sign * cfg.transient_amplitude * np.exp(-((t - center) ** 2) / (2 * width**2))
        if cfg.noise_std > 0:
            sig += rng.normal(0.0, cfg.noise_std, cfg.length)
        x[i, 0] = sig
    batch = SignalBatch(x, labels, cfg.sample_rate)
    if cfg.normalize:
        batch = zscore_normalize(batch)
    groups = [np.flatnonzero(labels == c) for c in range(cfg.n_classes)]
    splits = _assign_splits(groups, cfg.split, seed)
    manifest = {"generator": "synthetic_classification", "config": cfg.to_dict(),
                "seed": seed, "rng": RNG_ALGORITHM}
    return LabeledDataset(batch, LABEL_CLASS, splits, manifest)


def generate_synthetic_regression(cfg, seed):
    """Noisy periodic signals whose target is the fundamental frequency."""
    cfg.validate()
    lo, hi = cfg.band
    t = np.arange(cfg.length)
    x = np.empty((cfg.n_samples, 1, cfg.length))
    targets = np.empty(cfg.n_samples)
    for i in range(cfg.n_samples):
        rng = philox(seed, i)
        f = rng.uniform(lo, hi)
        sig = np.sin(2 * np.pi * f * t / cfg.sample_rate + rng.uniform(0, 2 * np.pi))
        for k, amp in enumerate(cfg.harmonics, start=2):
            sig += amp * np.sin(2 * np.pi * k * f * t / cfg.sample_rate + rng.uniform(0, 2 * np.pi))
        if cfg.noise_std > 0:
            sig += rng.normal(0.0, cfg.noise_std, cfg.length)
        x[i, 0] = sig
        targets[i] = f * cfg.target_scale
    batch = SignalBatch(x, targets, cfg.sample_rate)
    if cfg.normalize:
        batch = zscore_normalize(batch)
    splits = _assign_splits([np.arange(cfg.n_samples)], cfg.split, seed)
    manifest = {"generator": "synthetic_regression", "config": cfg.to_dict(),
                "seed": seed, "rng": RNG_ALGORITHM}
    return LabeledDataset(batch, LABEL_TARGET, splits, manifest)


def zscore_normalize(batch, return_flags=False):
    """Per-window, per-channel standardization with population std.

    Windows whose std is at most 1e-12 are only centered and flagged.
    A plain array is normalized along its last axis and returned as an array.
    """
    x = batch.samples if isinstance(batch, SignalBatch) else np.asarray(batch, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    std = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    flat = std <= 1e-12
    out = np.where(flat, centered, centered / np.where(flat, 1.0, std))
    if not isinstance(batch, SignalBatch):
        return (out, flat[..., 0]) if return_flags else out
    result = SignalBatch(out, batch.labels, batch.sample_rate)
    if return_flags:
        return result, flat.squeeze(2)
    return result


def window_signal(series, win_len, stride, sample_rate=1.0):
    """Cut a (L,) or (C, L) series into windows; the trailing remainder is dropped."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[None]
    total = series.shape[1]
    if win_len > total:
        raise ContractError(f"window length {win_len} exceeds series length {total}")
    if stride < 1:
        raise ContractError("stride must be positive")
    count = (total - win_len) // stride + 1
    windows = np.stack([series[:, k * stride:k * stride + win_len] for k in range(count)])
    return SignalBatch(windows, sample_rate=sample_rate)


# ----------------------------------------------------------------------
# files

DATASET_MAGIC = b"FPDS"
DATASET_VERSION = 1


def write_dataset(ds, path):
    """Binary dataset file; the trailing block holds the JSON manifest."""
    b = ds.batch
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        write_u32(fh, DATASET_VERSION)
        write_u32(fh, b.n)
        write_u32(fh, b.channels)
        write_u32(fh, b.length)
        write_u8(fh, ds.label_kind if b.labels is not None else LABEL_NONE)
        write_u8(fh, 1 if ds.splits is not None else 0)
        write_f64(fh, b.samples)
        if b.labels is not None and ds.label_kind == LABEL_CLASS:
            fh.write(np.ascontiguousarray(b.labels, dtype="<i8").tobytes())
        elif b.labels is not None and ds.label_kind == LABEL_TARGET:
            write_f64(fh, b.labels)
        if ds.splits is not None:
            fh.write(np.ascontiguousarray(ds.splits, dtype=np.uint8).tobytes())
        meta = dict(ds.manifest)
        meta["sample_rate"] = b.sample_rate
        write_text_block(fh, json.dumps(meta, sort_keys=True))


def read_dataset(path):
    with open(path, "rb") as fh:
        if read_exact(fh, 4) != DATASET_MAGIC:
            raise FormatError(f"{path}: not a dataset file")
        version = read_u32(fh)
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        n, c, length = read_u32(fh), read_u32(fh), read_u32(fh)
        kind, has_split = read_u8(fh), read_u8(fh)
        samples = read_f64(fh, (n, c, length))
        labels = None
        if kind == LABEL_CLASS:
            labels = np.frombuffer(read_exact(fh, 8 * n), dtype="<i8").astype(np.int64)
        elif kind == LABEL_TARGET:
            labels = read_f64(fh, (n,))
        elif kind != LABEL_NONE:
            raise FormatError(f"{path}: unknown label kind {kind}")
        splits = None
        if has_split:
            splits = np.frombuffer(read_exact(fh, n), dtype=np.uint8).copy()
        meta = json.loads(read_text_block(fh))
    rate = float(meta.pop("sample_rate", 1.0))
    return LabeledDataset(SignalBatch(samples, labels, rate), kind, splits, meta)


def read_csv(path, schema):
    """Load windows from CSV according to ``schema`` (dict or JSON sidecar path).

    Schema keys: ``layout`` is ``"flattened"`` (one row per window, values in
    channel-major order) or ``"long"`` (one row per time step with a
    ``window_column`` and ``channel_columns``); ``channels`` and ``length``
    give the window shape; ``label_column`` and ``label_kind``
    (``"class"``/``"target"``) are optional; ``sample_rate`` is metadata.
    """
    if isinstance(schema, str):
        with open(schema) as fh:
            schema = json.load(fh)
    layout = schema.get("layout", "flattened")
    channels, length = int(schema["channels"]), int(schema["length"])
    label_col = schema.get("label_column")
    kind = {"class": LABEL_CLASS, "target": LABEL_TARGET, None: LABEL_NONE}[
        schema.get("label_kind") if label_col else None]
    parse_label = int if kind == LABEL_CLASS else float

    windows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty CSV")
        col = {name: i for i, name in enumerate(header)}
        if label_col is not None and label_col not in col:
            raise FormatError(f"{path}: label column {label_col!r} missing from header")
        if layout == "flattened":
            value_idx = [i for i, name in enumerate(header) if name != label_col]
            if len(value_idx) != channels * length:
                raise FormatError(f"{path}: expected {channels * length} value columns, found {len(value_idx)}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    vals = [float(row[i]) for i in value_idx]
                    if label_col is not None:
                        labels.append(parse_label(row[col[label_col]]))
                except (ValueError, IndexError) as exc:
                    raise FormatError(f"{path}:{lineno}: malformed row ({exc})") from None
                windows.append(np.asarray(vals).reshape(channels, length))
        elif layout == "long":
            win_col = schema.get("window_column", "window")
            chan_cols = schema["channel_columns"]
            if len(chan_cols) != channels:
                raise FormatError("channel_columns must list one column per channel")
            missing = [name for name in [win_col, *chan_cols] if name not in col]
            if missing:
                raise FormatError(f"{path}: columns {missing} missing from header")
            rows, order, wlabels = {}, [], {}
            for lineno, row in enumerate(reader, start=2):
                try:
                    w = row[col[win_col]]
                    vals = [float(row[col[name]]) for name in chan_cols]
                    lab = parse_label(row[col[label_col]]) if label_col is not None else None
                except (ValueError, IndexError) as exc:
                    raise FormatError(f"{path}:{lineno}: malformed row ({exc})") from None
                if w not in rows:
                    rows[w] = []
                    order.append(w)
                    wlabels[w] = lab
                elif lab != wlabels[w]:
                    raise FormatError(f"{path}:{lineno}: label changes within window {w!r}")
                rows[w].append(vals)
            for w in order:
                arr = np.asarray(rows[w])
                if arr.shape != (length, channels):
                    raise FormatError(f"{path}: window {w!r} has {arr.shape[0]} steps, expected {length}")
                windows.append(arr.T)
                if label_col is not None:
                    labels.append(wlabels[w])
        else:
            raise FormatError(f"unknown CSV layout {layout!r}")
    if not windows:
        raise FormatError(f"{path}: no data rows")
    batch = SignalBatch(np.stack(windows), np.asarray(labels) if label_col else None,
                        float(schema.get("sample_rate", 1.0)))
    return LabeledDataset(batch, kind, None, {"source": str(path), "schema": schema})
