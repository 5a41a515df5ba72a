"""Inference features and linear probing on frozen representations."""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .binfmt import read_tensor, write_tensor
from .errors import ContractError, FormatError, MetricError
from .models import Linear, init_parameters
from .trainer import PHASE_MAPPERS, OptimState, adam_step, cosine_lr

CLASSIFICATION, REGRESSION = "classification", "regression"


@dataclass
class FeatureMatrix:
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.values, dtype="<f8").tobytes()).hexdigest()


def write_features(features, path):
    """Tensor file at ``path`` plus ``<path>.json`` with provenance and content hash."""
    with open(path, "wb") as fh:
        write_tensor(fh, features.values)
    with open(f"{path}.json", "w") as fh:
        json.dump({"provenance": features.provenance, "sha256": features.hash()}, fh, indent=2, sort_keys=True)


def read_features(path):
    with open(path, "rb") as fh:
        values = read_tensor(fh)
    with open(f"{path}.json") as fh:
        meta = json.load(fh)
    fm = FeatureMatrix(values, meta.get("provenance", {}))
    if meta.get("sha256") != fm.hash():
        raise FormatError(f"{path}: feature values do not match the sidecar hash")
    return fm


def extract_features(bundle, batch, parts=("t", "F", "W"), chunk=256):
    """[h_t ; mapper_F(h_t) ; mapper_W(h_t)] from the time encoder alone.

    ``parts`` selects which blocks to keep (``("t",)`` gives h_t only).
    """
    if bundle.phase != PHASE_MAPPERS:
        raise ContractError(f"feature extraction needs phase {PHASE_MAPPERS!r}, got {bundle.phase!r}")
    enc = bundle.encoders["t"]
    enc.eval()
    for m in bundle.h_mappers.values():
        m.eval()
    rows = []
    with T.no_grad():
        for start in range(0, batch.n, chunk):
            h_t = enc(T.Tensor(batch.samples[start:start + chunk]))
            blocks = {"t": h_t.data,
                      "F": bundle.h_mappers["F"](h_t).data,
                      "W": bundle.h_mappers["W"](h_t).data}
            rows.append(np.concatenate([blocks[p] for p in parts], axis=1))
    values = np.concatenate(rows)
    data_hash = hashlib.sha256(np.ascontiguousarray(batch.samples, dtype="<f8").tobytes()).hexdigest()
    return FeatureMatrix(values, {"bundle": bundle.hash(), "dataset": data_hash, "parts": list(parts)})


@dataclass
class LinearProbe:
    layer: Linear
    task: str
    mean: np.ndarray
    scale: np.ndarray

    @property
    def weight(self):
        return self.layer.weight.data

    @property
    def bias(self):
        return self.layer.bias.data

    def _prep(self, features):
        return (features - self.mean) / self.scale

    def logits(self, features):
        with T.no_grad():
            return self.layer(T.Tensor(self._prep(features))).data

    def predict(self, features):
        out = self.logits(features)
        return out.argmax(axis=1) if self.task == CLASSIFICATION else out[:, 0]


def _values(features):
    return features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)


def train_linear_probe(features, labels, task=CLASSIFICATION, lr=0.03, epochs=100, seed=0,
                       n_classes=None, standardize=True):
    """Single affine layer trained full-batch with Adam and cosine decay.

    Features are standardized with training-set statistics (stored on the
    probe) and never modified.
    """
    x = _values(features)
    labels = np.asarray(labels)
    if x.shape[0] != labels.shape[0]:
        raise ContractError(f"{x.shape[0]} feature rows but {labels.shape[0]} labels")
    if task not in (CLASSIFICATION, REGRESSION):
        raise ContractError(f"unknown task {task!r}")
    if standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
    else:
        mu, sd = np.zeros(x.shape[1]), np.ones(x.shape[1])
    n_out = (int(n_classes) if n_classes else int(labels.max()) + 1) if task == CLASSIFICATION else 1
    layer = init_parameters(Linear(x.shape[1], n_out), seed, 30)
    probe = LinearProbe(layer, task, mu, sd)
    xs = T.Tensor(probe._prep(x))
    params = layer.parameters()
    state = OptimState.for_params(params)
    for epoch in range(epochs):
        for p in params:
            p.grad = None
        out = layer(xs)
        if task == CLASSIFICATION:
            loss = T.softmax_cross_entropy(out, labels.astype(np.int64))
        else:
            diff = T.sub(T.reshape(out, (x.shape[0],)), T.Tensor(labels.astype(np.float64)))
            loss = T.mean(T.mul(diff, diff))
        T.backward(loss)
        adam_step(params, [p.grad for p in params], state, cosine_lr(epoch, epochs, lr))
    return probe


@dataclass
class MetricsReport:
    task: str
    values: dict
    flags: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in self.values.items():
                w.writerow([k, repr(float(v))])

    def summary(self):
        lines = [f"task: {self.task}"]
        lines += [f"  {k:<12s} {v:.4f}" for k, v in self.values.items()]
        lines += [f"  note: {k}" for k, v in self.flags.items() if v]
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def classification_metrics(y_true, y_pred, n_classes=None):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ContractError("cannot score an empty prediction set")
    k = n_classes or int(max(y_true.max(), y_pred.max())) + 1
    cm = confusion_matrix(y_true, y_pred, k)
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    denom = support + predicted
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 0.0)
    p_o = tp.sum() / total
    p_e = float((support * predicted).sum()) / (total * total)
    kappa = 1.0 if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)
    return MetricsReport(CLASSIFICATION, {
        "accuracy": float(p_o),
        "macro_f1": float(f1.mean()),
        "weighted_f1": float((f1 * support).sum() / total),
        "kappa": float(kappa),
    })


def regression_metrics(preds, targets, mape=True):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise ContractError("cannot score an empty prediction set")
    if not np.isfinite(targets).all():
        raise ContractError("targets must be finite")
    err = preds - targets
    values = {"mae": float(np.abs(err).mean()), "rmse": float(math.sqrt((err * err).mean()))}
    flags = {}
    dp, dt = preds - preds.mean(), targets - targets.mean()
    sp, st = math.sqrt((dp * dp).sum()), math.sqrt((dt * dt).sum())
    if sp == 0.0 or st == 0.0:
        values["pearson"] = 0.0
        flags["degenerate_variance"] = True
    else:
        values["pearson"] = float(np.clip((dp * dt).sum() / (sp * st), -1.0, 1.0))
    if mape:
        if (np.abs(targets) <= 1e-9).any():
            raise MetricError("MAPE is undefined when a target is zero")
        values["mape"] = float(np.abs(err / targets).mean() * 100.0)
    return MetricsReport(REGRESSION, values, flags)


def evaluate_classification(probe, features, labels):
    x = _values(features)
    if x.shape[0] == 0:
        raise ContractError("cannot evaluate on an empty set")
    return classification_metrics(labels, probe.predict(x), probe.weight.shape[1])


def evaluate_regression(probe, features, targets, mape=True):
    return regression_metrics(probe.predict(_values(features)), targets, mape)
