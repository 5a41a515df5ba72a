"""Contrastive and mapping objectives across the time, Fourier and wavelet domains."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateVectorError, DimensionError

DOMAINS = ("t", "F", "W")
PAIRS = (("t", "F"), ("t", "W"), ("F", "W"))
DIRECTED = (("t", "F"), ("F", "t"), ("t", "W"), ("W", "t"), ("F", "W"), ("W", "F"))


@dataclass
class TemperatureConfig:
    tau: float = 0.2

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("temperature must be positive")


@dataclass
class LossReport:
    l_id: float
    l_map: float
    total: float
    per_pair: dict = field(default_factory=dict)

    CSV_HEADER = ("step", "l_id", "l_map", "total") + tuple(f"{a}->{b}" for a, b in DIRECTED)

    def csv_row(self, step):
        vals = [self.l_id, self.l_map, self.total] + [self.per_pair[p] for p in DIRECTED]
        return [str(step)] + [repr(float(v)) for v in vals]


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        raise DegenerateVectorError("cosine similarity of a near-zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _as_t(z):
    return z if isinstance(z, T.Tensor) else T.Tensor(z)


def ntxent_pair(z_anchor, z_other, tau, include_positive=True):
    """Per-anchor NT-Xent losses (N,) for anchors in one domain against another.

    Row ``i`` of ``z_other`` is the positive for anchor ``i``; the remaining
    rows of ``z_other`` are its negatives. With ``include_positive`` the
    positive term also sits in the denominator (the usual softmax form);
    without it the denominator sums over negatives only.
    """
    za, zb = _as_t(z_anchor), _as_t(z_other)
    if za.ndim != 2 or za.shape != zb.shape:
        raise DimensionError(f"embedding sets must be row-aligned N x d, got {za.shape} and {zb.shape}")
    n = za.shape[0]
    if n < 2:
        raise ContractError("NT-Xent needs at least two samples")
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    sims = T.scale(T.matmul(T.l2_normalize(za), T.transpose(T.l2_normalize(zb))), 1.0 / tau)
    eye = np.eye(n)
    pos = T.sum(T.mul(sims, T.Tensor(eye)), axis=1)
    if include_positive:
        denom = sims
    else:
        # exp(-1e6) underflows to exactly 0, removing the diagonal from the sum
        denom = T.add(T.mul(sims, T.Tensor(1.0 - eye)), T.Tensor(-1e6 * eye))
    return T.sub(T.logsumexp(denom, axis=1), pos)


def instance_discrimination_loss(z_t, z_f, z_w, tau, include_positive=True):
    """Sum over the three domain pairs of the symmetric mean NT-Xent.

    Returns ``(loss_tensor, per_pair)`` where ``per_pair`` maps each ordered
    pair ``(d, d')`` to the mean anchor loss with anchors in ``d``.
    """
    zs = {"t": _as_t(z_t), "F": _as_t(z_f), "W": _as_t(z_w)}
    shapes = {z.shape for z in zs.values()}
    if len(shapes) != 1:
        raise DimensionError(f"embedding sets differ in shape: {sorted(shapes)}")
    per_pair = {}
    total = None
    for a, b in PAIRS:
        fwd = T.mean(ntxent_pair(zs[a], zs[b], tau, include_positive))
        bwd = T.mean(ntxent_pair(zs[b], zs[a], tau, include_positive))
        per_pair[(a, b)] = fwd.item()
        per_pair[(b, a)] = bwd.item()
        term = T.scale(T.add(fwd, bwd), 0.5)
        total = term if total is None else T.add(total, term)
    return total, per_pair


def _apply_mapper(mapper, z):
    return mapper(z) if mapper is not None else z


def mapping_loss(z_t, z_f, z_w, map_f, map_w, detach_targets=False):
    """Batch-averaged L1 error of mapping time embeddings onto the other two domains.

    ``map_f`` and ``map_w`` are callables on N x d tensors (usually
    :class:`~frameproj.models.LatentMapper`).
    """
    z_t, z_f, z_w = _as_t(z_t), _as_t(z_f), _as_t(z_w)
    if detach_targets:
        z_f, z_w = z_f.detach(), z_w.detach()
    n = z_t.shape[0]
    err_f = T.l1_norm(T.sub(_apply_mapper(map_f, z_t), z_f))
    err_w = T.l1_norm(T.sub(_apply_mapper(map_w, z_t), z_w))
    return T.scale(T.add(err_f, err_w), 1.0 / n)


def total_pretrain_loss(l_id, l_map):
    """Unweighted sum; accepts tensors or floats."""
    if isinstance(l_id, T.Tensor) or isinstance(l_map, T.Tensor):
        return T.add(_as_t(l_id), _as_t(l_map))
    if not (np.isfinite(l_id) and np.isfinite(l_map)):
        raise ContractError("loss components must be finite")
    return l_id + l_map
