"""Encoders, projector and latent mapper built on :mod:`frameproj.tensor`.

Modules register parameters and children on attribute assignment, in
definition order; that order drives initialization, hashing and
checkpoint layout.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .binfmt import (
    read_exact,
    read_tensor,
    read_text_block,
    read_u32,
    write_tensor,
    write_text_block,
    write_u32,
)
from .data import philox
from .errors import ConfigError, ContractError, FormatError
from .frames import ScalogramView, SignalBatch, SpectralView

FAMILIES = ("time", "fourier", "wavelet")


class Parameter(T.Tensor):
    __slots__ = ("fan_in", "init")

    def __init__(self, shape, fan_in=None, init="uniform"):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.fan_in = fan_in
        self.init = init


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state(self):
        """Ordered name -> array mapping of parameters and buffers."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state(self, arrays):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        for name, arr in arrays.items():
            target = own[name].data if name in own else bufs.get(name)
            if target is None:
                raise FormatError(f"unexpected tensor {name!r}")
            if target.shape != arr.shape:
                raise FormatError(f"{name}: shape {arr.shape} does not match expected {target.shape}")
            target[...] = arr
        missing = (set(own) | set(bufs)) - set(arrays)
        if missing:
            raise FormatError(f"checkpoint lacks tensors {sorted(missing)}")

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def parameter_hash(module):
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


def init_parameters(model, seed, stream=0):
    """Fan-in scaled uniform init, U(-sqrt(1/fan_in), sqrt(1/fan_in)).

    Parameters are drawn in registration order from one Philox stream, so
    the same seed reproduces the same model bit-for-bit.
    """
    rng = philox(seed, stream)
    for _, p in model.named_parameters():
        if p.init == "ones":
            p.data[...] = 1.0
        elif p.init == "zeros":
            p.data[...] = 0.0
        else:
            bound = np.sqrt(1.0 / p.fan_in)
            p.data[...] = rng.uniform(-bound, bound, size=p.data.shape)
    for name, buf in model.named_buffers():
        buf[...] = 1.0 if name.endswith("running_var") else 0.0
    return model


# ----------------------------------------------------------------------
# layers


class Linear(Module):
    def __init__(self, d_in, d_out):
        super().__init__()
        self.weight = Parameter((d_in, d_out), fan_in=d_in)
        self.bias = Parameter((d_out,), fan_in=d_in)

    def forward(self, x):
        return T.add_bias(T.matmul(x, self.weight), self.bias)


class Conv1d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Parameter((cout, cin, k), fan_in=cin * k)
        self.bias = Parameter((cout,), fan_in=cin * k) if bias else None

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, output_padding=0):
        super().__init__()
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        self.weight = Parameter((cin, cout, k), fan_in=cin * k)
        self.bias = Parameter((cout,), fan_in=cin * k)

    def forward(self, x):
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Parameter((cout, cin, k, k), fan_in=cin * k * k)
        self.bias = Parameter((cout,), fan_in=cin * k * k) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter((channels,), init="ones")
        self.beta = Parameter((channels,), init="zeros")
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, p, seed=0):
        super().__init__()
        self.p = p
        object.__setattr__(self, "rng", philox(seed, 1))

    def forward(self, x):
        return T.dropout(x, self.p, self.rng, self.training)


class ResBlock1d(Module):
    """conv-bn-relu-conv-bn plus (projected) skip, then relu."""

    def __init__(self, cin, cout, k, stride, dropout=0.0):
        super().__init__()
        pad = k // 2
        self.conv1 = Conv1d(cin, cout, k, stride, pad, bias=False)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv1d(cout, cout, k, 1, pad, bias=False)
        self.bn2 = BatchNorm(cout)
        self.drop = Dropout(dropout)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = Conv1d(cin, cout, 1, stride, 0, bias=False)
            self.proj_bn = BatchNorm(cout)

    def forward(self, x):
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(self.drop(h)))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return self.drop(T.relu(T.add(h, skip)))


def _conv_len(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


# ----------------------------------------------------------------------
# encoders


@dataclass
class EncoderConfig:
    family: str = "time"
    channels_in: int = 1
    length_in: int = 128  # time samples; frequency bins for the Fourier family
    blocks: int = 2
    width: int = 16
    latent_dim: int = 64
    kernel_size: int = 5
    dropout: float = 0.0
    n_scales: int = 48  # wavelet family only
    max_time: int = 64  # wavelet family: time axis pooled to at most this many steps

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown encoder family {self.family!r}")
        if self.latent_dim < 8:
            raise ConfigError("latent_dim must be at least 8")
        if self.blocks < 1:
            raise ConfigError("need at least one residual block")
        if self.width < 1:
            raise ConfigError("width must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)


class TimeEncoder(Module):
    """Strided conv stem, residual blocks, global average pool, affine head."""

    family = "time"

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        if cfg.family != "time":
            raise ConfigError("TimeEncoder needs family 'time'")
        k = cfg.kernel_size
        length = _conv_len(cfg.length_in, k, 2, k // 2)
        if cfg.length_in < 8 or length < 4:
            raise ConfigError(f"length {cfg.length_in} too short for the stem and {cfg.blocks} blocks")
        self.cfg = cfg
        self.stem = Conv1d(cfg.channels_in, cfg.width, k, 2, k // 2, bias=False)
        self.stem_bn = BatchNorm(cfg.width)
        chans = 2 * cfg.width
        cin = cfg.width
        self._blocks = []
        for i in range(cfg.blocks):
            stride = 2 if length >= 8 else 1
            block = ResBlock1d(cin, chans, k, stride, cfg.dropout)
            setattr(self, f"block{i}", block)
            self._blocks.append(block)
            length = _conv_len(length, k, stride, k // 2)
            cin = chans
        self.head = Linear(chans, cfg.latent_dim)

    def forward(self, x):
        h = T.relu(self.stem_bn(self.stem(x)))
        for block in self._blocks:
            h = block(h)
        return self.head(T.global_avg_pool(h))


class _SpectralBranch(Module):
    def __init__(self, cin, width, blocks, k, out_dim, dropout):
        super().__init__()
        self.stem = Conv1d(cin, width, k, 1, k // 2, bias=False)
        self.stem_bn = BatchNorm(width)
        self._blocks = []
        c = width
        for i in range(blocks):
            block = ResBlock1d(c, 2 * c, k, 2, dropout)
            setattr(self, f"block{i}", block)
            self._blocks.append(block)
            c *= 2
        self.head = Linear(c, out_dim)

    def forward(self, x):
        h = T.relu(self.stem_bn(self.stem(x)))
        for block in self._blocks:
            h = block(h)
        return self.head(T.global_avg_pool(h))


class FourierEncoder(Module):
    """Separate amplitude and phase branches, concatenated."""

    family = "fourier"

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        if cfg.family != "fourier":
            raise ConfigError("FourierEncoder needs family 'fourier'")
        if cfg.latent_dim % 2:
            raise ConfigError("fourier latent_dim must be even")
        length = cfg.length_in
        for _ in range(cfg.blocks):
            length = _conv_len(length, cfg.kernel_size, 2, cfg.kernel_size // 2)
        if length < 1:
            raise ConfigError("too few frequency bins for the block count")
        self.cfg = cfg
        half = cfg.latent_dim // 2
        self.amplitude = _SpectralBranch(cfg.channels_in, cfg.width, cfg.blocks, cfg.kernel_size, half, cfg.dropout)
        self.phase = _SpectralBranch(cfg.channels_in, cfg.width, cfg.blocks, cfg.kernel_size, half, cfg.dropout)

    def forward(self, magnitudes, phases):
        return T.concat([self.amplitude(magnitudes), self.phase(phases)], axis=1)


class _ConvBlock2d(Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv = Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn = BatchNorm(cout)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))


class WaveletEncoder(Module):
    """Multi-resolution 2-D conv pyramid over the (scale, time) scalogram.

    The input is first averaged to at most ``max_time`` time steps. Pooled
    copies of the input at 1/2 and 1/4 resolution are concatenated after
    the second and third conv blocks.
    """

    family = "wavelet"
    grid = (3, 4)

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        if cfg.family != "wavelet":
            raise ConfigError("WaveletEncoder needs family 'wavelet'")
        if cfg.n_scales < 8 or cfg.length_in < 8:
            raise ConfigError("scalogram needs at least 8 scales and 8 time steps")
        self.cfg = cfg
        n, c = cfg.width, cfg.channels_in
        self.in_hw = (cfg.n_scales, min(cfg.length_in, cfg.max_time))
        h1 = (_conv_len(self.in_hw[0], 3, 2, 1), _conv_len(self.in_hw[1], 3, 2, 1))
        h2 = (_conv_len(h1[0], 3, 2, 1), _conv_len(h1[1], 3, 2, 1))
        h3 = (_conv_len(h2[0], 3, 2, 1), _conv_len(h2[1], 3, 2, 1))
        self.pool_hw = (h1, h2)
        self.out_grid = (min(self.grid[0], h3[0]), min(self.grid[1], h3[1]))
        self.conv1 = _ConvBlock2d(c, n, 1)
        self.conv2 = _ConvBlock2d(n, 2 * n, 2)
        self.conv3 = _ConvBlock2d(2 * n + c, 3 * n, 2)
        self.conv4 = _ConvBlock2d(3 * n + c, 4 * n, 2)
        self.drop = Dropout(cfg.dropout)
        self.head = Linear(4 * n * self.out_grid[0] * self.out_grid[1], cfg.latent_dim)

    def forward(self, x):
        if x.shape[2:] != self.in_hw:
            x = T.adaptive_avg_pool2d(x, self.in_hw)
        pool1 = T.adaptive_avg_pool2d(x, self.pool_hw[0])
        pool2 = T.adaptive_avg_pool2d(x, self.pool_hw[1])
        h = self.conv2(self.conv1(x))
        h = self.conv3(T.concat([h, pool1], axis=1))
        h = self.conv4(T.concat([h, pool2], axis=1))
        h = T.adaptive_avg_pool2d(self.drop(h), self.out_grid)
        return self.head(T.reshape(h, (h.shape[0], -1)))


class Projector(Module):
    def __init__(self, d_in, d_hidden, d_out):
        super().__init__()
        if min(d_in, d_hidden, d_out) < 1:
            raise ConfigError("projector dimensions must be positive")
        self.fc1 = Linear(d_in, d_hidden)
        self.fc2 = Linear(d_hidden, d_out)

    def forward(self, h):
        return self.fc2(T.relu(self.fc1(h)))


class LatentMapper(Module):
    """d-vector -> d-vector through a 64-channel strided conv bottleneck."""

    hidden = 64

    def __init__(self, latent_len):
        super().__init__()
        if latent_len % 2:
            raise ConfigError("mapper needs an even vector length")
        self.latent_len = latent_len
        self.down = Conv1d(1, self.hidden, 3, 2, 1)
        self.up = ConvTranspose1d(self.hidden, 1, 3, 2, 1, output_padding=1)

    def forward(self, v):
        n, d = v.shape
        if d != self.latent_len:
            raise ContractError(f"mapper built for length {self.latent_len}, got {d}")
        h = T.relu(self.down(T.reshape(v, (n, 1, d))))
        return T.reshape(self.up(h), (n, d))


def build_time_encoder(cfg):
    return TimeEncoder(cfg)


def build_fourier_encoder(cfg):
    return FourierEncoder(cfg)


def build_wavelet_encoder(cfg):
    return WaveletEncoder(cfg)


def build_encoder(cfg):
    return {"time": TimeEncoder, "fourier": FourierEncoder, "wavelet": WaveletEncoder}[cfg.family](cfg)


def build_projector(d_in, d_hidden, d_out):
    return Projector(d_in, d_hidden, d_out)


def build_mapper(latent_len):
    return LatentMapper(latent_len)


def encode(encoder, view):
    """Run ``encoder`` on a view object or raw array(s), returning a Tensor."""
    fam = encoder.family
    if fam == "time":
        x = view.samples if isinstance(view, SignalBatch) else view
        return encoder(T.Tensor(x))
    if fam == "fourier":
        mags, phases = (view.magnitudes, view.phases) if isinstance(view, SpectralView) else view
        return encoder(T.Tensor(mags), T.Tensor(phases))
    coeffs = view.coefficients if isinstance(view, ScalogramView) else view
    return encoder(T.Tensor(coeffs))


def forward_encode(encoder, view):
    """Eval-mode representations (N x latent_dim) as a numpy array."""
    expected = {"time": SignalBatch, "fourier": SpectralView, "wavelet": ScalogramView}[encoder.family]
    if not isinstance(view, expected):
        raise ContractError(f"{encoder.family} encoder cannot consume {type(view).__name__}")
    was = encoder.training
    encoder.eval()
    try:
        with T.no_grad():
            return encode(encoder, view).data
    finally:
        encoder.train(was)


# ----------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"FPCK"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, config, tensors):
    """``config`` maps keys to JSON-serializable values; ``tensors`` is ordered."""
    lines = "\n".join(f"{k}={json.dumps(v, sort_keys=True)}" for k, v in config.items())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        write_u32(fh, CHECKPOINT_VERSION)
        write_text_block(fh, lines)
        write_u32(fh, len(tensors))
        for name, arr in tensors.items():
            write_text_block(fh, name)
            write_tensor(fh, arr)
    os.replace(tmp, path)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        if read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint")
        version = read_u32(fh)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        config = {}
        for line in read_text_block(fh).splitlines():
            key, _, value = line.partition("=")
            config[key] = json.loads(value)
        tensors = {}
        for _ in range(read_u32(fh)):
            name = read_text_block(fh)
            tensors[name] = read_tensor(fh)
    return config, tensors
