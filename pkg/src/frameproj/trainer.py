"""Joint multi-domain pretraining and the frozen-encoder mapper phase."""

import csv
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import philox
from .errors import ConfigError, ContractError, FormatError, TrainingAborted
from .models import (
    EncoderConfig,
    build_encoder,
    build_mapper,
    build_projector,
    init_parameters,
    read_checkpoint,
    write_checkpoint,
)
from .objectives import LossReport, instance_discrimination_loss, mapping_loss

logger = logging.getLogger(__name__)

PHASE_PRETRAINED = "pretrained"
PHASE_MAPPERS = "mappers_trained"


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 30
    mapper_epochs: int = 20
    lr_pretrain: float = 0.003
    lr_mapper: float = 0.003
    tau: float = 0.2
    seed: int = 0
    deterministic: bool = True
    schedule: str = "cosine"
    include_positive: bool = True
    detach_targets: bool = False

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for NT-Xent negatives")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.mapper_epochs < 0:
            raise ConfigError("mapper_epochs cannot be negative")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class BundleConfig:
    channels: int = 1
    length: int = 128
    n_scales: int = 48
    latent_dim: int = 64
    blocks: int = 2
    time_width: int = 16
    fourier_width: int = 8
    wavelet_width: int = 8
    kernel_size: int = 5
    dropout: float = 0.0
    proj_hidden: int = 64
    proj_dim: int = 64

    def encoder_configs(self):
        common = dict(channels_in=self.channels, blocks=self.blocks, latent_dim=self.latent_dim,
                      kernel_size=self.kernel_size, dropout=self.dropout)
        return {
            "t": EncoderConfig(family="time", length_in=self.length, width=self.time_width, **common),
            "F": EncoderConfig(family="fourier", length_in=self.length // 2 + 1, width=self.fourier_width, **common),
            "W": EncoderConfig(family="wavelet", length_in=self.length, width=self.wavelet_width,
                               n_scales=self.n_scales, **common),
        }

    def to_dict(self):
        return dataclasses.asdict(self)


# ----------------------------------------------------------------------
# optimization


def cosine_lr(epoch, total_epochs, base_lr):
    """base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs)), no warmup."""
    if not 0 <= epoch < total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {total_epochs})")
    return max(0.0, base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs)))


@dataclass
class OptimState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update applied in place to ``params``."""
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state are misaligned")
    for g in grads:
        if g is not None and not np.isfinite(g).all():
            raise TrainingAborted("non-finite gradient encountered; aborting")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ----------------------------------------------------------------------
# bundle


@dataclass
class ModelBundle:
    config: BundleConfig
    encoders: dict
    projectors: dict
    z_mappers: dict
    h_mappers: dict = None
    seed: int = 0
    phase: str = PHASE_PRETRAINED
    meta: dict = field(default_factory=dict)

    def named_modules(self):
        for d in ("t", "F", "W"):
            yield f"f_{d}", self.encoders[d]
        for d in ("t", "F", "W"):
            yield f"g_{d}", self.projectors[d]
        for d in ("F", "W"):
            yield f"phi_z_{d}", self.z_mappers[d]
        if self.h_mappers is not None:
            for d in ("F", "W"):
                yield f"phi_h_{d}", self.h_mappers[d]

    def pretrain_parameters(self):
        params = []
        for name, mod in self.named_modules():
            if not name.startswith("phi_h"):
                params.extend(mod.parameters())
        return params

    def tensors(self):
        out = {}
        for name, mod in self.named_modules():
            for key, arr in mod.state().items():
                out[f"{name}.{key}"] = arr
        return out

    def hash(self, prefixes=None):
        h = hashlib.sha256()
        for name, arr in self.tensors().items():
            if prefixes is None or name.startswith(tuple(prefixes)):
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def train(self, mode=True):
        for _, mod in self.named_modules():
            mod.train(mode)

    def eval(self):
        self.train(False)


def _new_h_mappers(cfg, seed):
    return {d: init_parameters(build_mapper(cfg.latent_dim), seed, 20 + i)
            for i, d in enumerate(("F", "W"))}


def build_bundle(cfg, seed, with_h_mappers=False):
    """Fresh, initialized bundle; each module draws from its own Philox stream."""
    encs = cfg.encoder_configs()
    encoders = {d: init_parameters(build_encoder(encs[d]), seed, 10 + i)
                for i, d in enumerate(("t", "F", "W"))}
    projectors = {d: init_parameters(build_projector(cfg.latent_dim, cfg.proj_hidden, cfg.proj_dim), seed, 13 + i)
                  for i, d in enumerate(("t", "F", "W"))}
    if cfg.proj_dim % 2:
        raise ConfigError("proj_dim must be even for the embedding mappers")
    z_mappers = {d: init_parameters(build_mapper(cfg.proj_dim), seed, 16 + i)
                 for i, d in enumerate(("F", "W"))}
    bundle = ModelBundle(cfg, encoders, projectors, z_mappers, seed=seed)
    if with_h_mappers:
        bundle.h_mappers = _new_h_mappers(cfg, seed)
        bundle.phase = PHASE_MAPPERS
    return bundle


def bundle_config_for(batch, n_scales=48, **overrides):
    return BundleConfig(channels=batch.channels, length=batch.length, n_scales=n_scales, **overrides)


# ----------------------------------------------------------------------
# pretraining


@dataclass
class RunLog:
    rows: list = field(default_factory=list)  # (step, epoch, lr, LossReport)

    def append(self, step, epoch, lr, report):
        self.rows.append((step, epoch, lr, report))

    def totals(self):
        return np.array([r.total for _, _, _, r in self.rows])

    def epoch_means(self):
        out = {}
        for _, epoch, _, r in self.rows:
            out.setdefault(epoch, []).append(r.total)
        return {e: float(np.mean(v)) for e, v in out.items()}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LossReport.CSV_HEADER)
            for step, _, _, r in self.rows:
                w.writerow(r.csv_row(step))

    def digest(self):
        h = hashlib.sha256()
        for step, epoch, lr, r in self.rows:
            h.update(",".join(r.csv_row(step) + [repr(lr), str(epoch)]).encode())
        return h.hexdigest()


def pretrain_loss(bundle, x, mags, phases, scal, cfg):
    """Forward all three branches on one batch; returns (total, l_id, l_map, per_pair)."""
    h_t = bundle.encoders["t"](T.Tensor(x))
    h_f = bundle.encoders["F"](T.Tensor(mags), T.Tensor(phases))
    h_w = bundle.encoders["W"](T.Tensor(scal))
    z_t = bundle.projectors["t"](h_t)
    z_f = bundle.projectors["F"](h_f)
    z_w = bundle.projectors["W"](h_w)
    l_id, per_pair = instance_discrimination_loss(z_t, z_f, z_w, cfg.tau, cfg.include_positive)
    l_map = mapping_loss(z_t, z_f, z_w, bundle.z_mappers["F"], bundle.z_mappers["W"],
                         detach_targets=cfg.detach_targets)
    return T.add(l_id, l_map), l_id, l_map, per_pair


def _epoch_batches(n, batch_size, seed, epoch, stream_base):
    perm = philox(seed, stream_base + epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _lr(cfg, epoch, epochs, base):
    return cosine_lr(epoch, epochs, base) if cfg.schedule == "cosine" else base


def pretrain(batch, spectral, scalogram, cfg, bundle=None, bundle_cfg=None, progress=None):
    """Joint pretraining of encoders, projectors and embedding mappers.

    Every step encodes the three views of a mini-batch, sums the
    instance-discrimination and mapping losses, backpropagates through all
    modules at once and applies Adam. Returns ``(bundle, RunLog)``.
    """
    cfg.validate()
    n = batch.n
    if n < 2:
        raise ContractError("pretraining needs at least two samples")
    if bundle is None:
        bundle = build_bundle(bundle_cfg or bundle_config_for(batch, len(scalogram.scales)), cfg.seed)
    params = bundle.pretrain_parameters()
    state = OptimState.for_params(params)
    log = RunLog()
    x = batch.samples
    mags, phases = spectral.magnitudes, spectral.phases
    coeffs = scalogram.coefficients
    step = 0
    bundle.train()
    for epoch in range(cfg.epochs):
        lr = _lr(cfg, epoch, cfg.epochs, cfg.lr_pretrain)
        for idx in _epoch_batches(n, cfg.batch_size, cfg.seed, epoch, 1 << 32):
            if len(idx) < 2:
                logger.warning("skipping a batch with %d sample(s) at epoch %d", len(idx), epoch)
                continue
            for p in params:
                p.grad = None
            total, l_id, l_map, per_pair = pretrain_loss(bundle, x[idx], mags[idx], phases[idx], coeffs[idx], cfg)
            T.backward(total)
            adam_step(params, [p.grad for p in params], state, lr)
            report = LossReport(l_id.item(), l_map.item(), total.item(), per_pair)
            log.append(step, epoch, lr, report)
            step += 1
        if progress is not None:
            progress(epoch, log)
    bundle.phase = PHASE_PRETRAINED
    bundle.h_mappers = None
    return bundle, log


def encode_all(bundle, batch, spectral=None, scalogram=None, chunk=256):
    """Eval-mode representations for every available view, no graph recorded."""
    bundle.eval()
    out = {"t": [], "F": [], "W": []}
    with T.no_grad():
        for start in range(0, batch.n, chunk):
            sl = slice(start, start + chunk)
            out["t"].append(bundle.encoders["t"](T.Tensor(batch.samples[sl])).data)
            if spectral is not None:
                out["F"].append(bundle.encoders["F"](T.Tensor(spectral.magnitudes[sl]),
                                                     T.Tensor(spectral.phases[sl])).data)
            if scalogram is not None:
                out["W"].append(bundle.encoders["W"](T.Tensor(scalogram.coefficients[sl])).data)
    return {k: np.concatenate(v) for k, v in out.items() if v}


def fit_mappers(mappers, h_t, h_f, h_w, cfg, log=None):
    """Train two mappers so that mapper_F(h_t) ~ h_f and mapper_W(h_t) ~ h_w under L1."""
    params = mappers["F"].parameters() + mappers["W"].parameters()
    state = OptimState.for_params(params)
    n = h_t.shape[0]
    step = 0
    for epoch in range(cfg.mapper_epochs):
        lr = _lr(cfg, epoch, cfg.mapper_epochs, cfg.lr_mapper)
        for idx in _epoch_batches(n, cfg.batch_size, cfg.seed, epoch, 2 << 32):
            for p in params:
                p.grad = None
            loss = mapping_loss(h_t[idx], h_f[idx], h_w[idx], mappers["F"], mappers["W"])
            T.backward(loss)
            adam_step(params, [p.grad for p in params], state, lr)
            if log is not None:
                log.append((step, epoch, lr, loss.item()))
            step += 1
    return mappers


def mapper_loss_value(mappers, h_t, h_f, h_w):
    with T.no_grad():
        return mapping_loss(h_t, h_f, h_w, mappers["F"], mappers["W"]).item()


def train_latent_mappers(bundle, batch, spectral, scalogram, cfg, log=None):
    """Freeze the encoders and fit the representation mappers.

    Representations are computed once in eval mode; only the two new
    mappers receive updates, so every encoder and projector parameter is
    left bit-identical.
    """
    if bundle.phase != PHASE_PRETRAINED:
        raise ContractError(f"mapper training needs a pretrained bundle, phase is {bundle.phase!r}")
    cfg.validate()
    reps = encode_all(bundle, batch, spectral, scalogram)
    mappers = _new_h_mappers(bundle.config, cfg.seed)
    fit_mappers(mappers, reps["t"], reps["F"], reps["W"], cfg, log)
    bundle.h_mappers = mappers
    bundle.phase = PHASE_MAPPERS
    return bundle


# ----------------------------------------------------------------------
# persistence


def save_bundle(bundle, path):
    config = {
        "kind": "frameproj-bundle",
        "bundle_config": bundle.config.to_dict(),
        "seed": bundle.seed,
        "phase": bundle.phase,
        "meta": bundle.meta,
    }
    write_checkpoint(path, config, bundle.tensors())


def load_bundle(path):
    config, tensors = read_checkpoint(path)
    if config.get("kind") != "frameproj-bundle":
        raise FormatError(f"{path}: not a model bundle")
    phase = config["phase"]
    if phase not in (PHASE_PRETRAINED, PHASE_MAPPERS):
        raise FormatError(f"{path}: unknown phase {phase!r}")
    cfg = BundleConfig(**config["bundle_config"])
    bundle = build_bundle(cfg, config["seed"], with_h_mappers=phase == PHASE_MAPPERS)
    bundle.phase = phase
    bundle.meta = config.get("meta", {})
    for name, mod in bundle.named_modules():
        prefix = name + "."
        mod.load_state({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
    known = {name for name, _ in bundle.named_modules()}
    stray = {k.split(".", 1)[0] for k in tensors} - known
    if stray:
        raise FormatError(f"{path}: tensors for unknown modules {sorted(stray)}")
    return bundle
