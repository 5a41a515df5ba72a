"""Embedding geometry diagnostics and the contrastive invariance lower bound.

Covers same-sample angles across two representation spaces, the spread of
pairwise angular differences, Levy concentration on the sphere, pairwise
distance tables, radial histograms and a constructive check that NT-Xent is
bounded below when an encoder maps distinct inputs onto near-duplicates.
"""

import csv
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .data import philox
from .errors import ConstructionError, ContractError, DegenerateVectorError, DimensionError
from .objectives import ntxent_pair

BOUND_TOLERANCE = 1e-9
CONSTRUCTION_TOLERANCE = 1e-12


def _unit_rows(h, what="embedding"):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionError(f"{what} set must be N x d, got shape {h.shape}")
    norms = np.linalg.norm(h, axis=1)
    if (norms < 1e-12).any():
        raise DegenerateVectorError(f"{what} set has a zero row at index {int(np.argmin(norms))}")
    return h / norms[:, None]


def _aligned(h_a, h_b):
    a, b = _unit_rows(h_a), _unit_rows(h_b)
    if a.shape != b.shape:
        raise DimensionError(f"sets must be row-aligned, got {a.shape} and {b.shape}")
    return a, b


def _describe(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "min": float("nan"), "max": float("nan")}
    return {"mean": float(x.mean()), "std": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "min": float(x.min()), "max": float(x.max())}


def same_sample_angles(h_a, h_b):
    """Angle in [0, pi] between row i of ``h_a`` and row i of ``h_b``."""
    a, b = _aligned(h_a, h_b)
    return np.arccos(np.clip(np.einsum("nd,nd->n", a, b), -1.0, 1.0))


def _pair_angles(u):
    gram = np.clip(u @ u.T, -1.0, 1.0)
    i, j = np.triu_indices(u.shape[0], k=1)
    return np.arccos(gram[i, j])


def pairwise_angle_spread(h_a, h_b):
    """Signed differences of within-space pair angles, one per i < j.

    Returned in ``np.triu_indices`` order.
    """
    a, b = _aligned(h_a, h_b)
    if a.shape[0] < 2:
        raise ContractError("pairwise spread needs at least two samples")
    return _pair_angles(a) - _pair_angles(b)


@dataclass
class AngleStats:
    same_sample_angles: np.ndarray
    delta_ij: np.ndarray
    same: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)

    @classmethod
    def compute(cls, h_a, h_b):
        theta = same_sample_angles(h_a, h_b)
        delta = pairwise_angle_spread(h_a, h_b)
        return cls(theta, delta, _describe(theta), _describe(delta))

    def summary(self):
        s, d = self.same, self.delta
        return (f"same-sample angle: mean {s['mean']:.4f} std {s['std']:.4f} "
                f"range [{s['min']:.4f}, {s['max']:.4f}] rad\n"
                f"pairwise delta:    mean {d['mean']:.4f} std {d['std']:.4f} "
                f"range [{d['min']:.4f}, {d['max']:.4f}] rad, max |delta| "
                f"{float(np.abs(self.delta_ij).max()):.4f}")


def levy_bound(d, eps):
    """Upper bound on Pr(|<u, v>| > eps) for independent uniform unit vectors in R^d."""
    if int(d) != d or d < 3:
        raise ContractError(f"Levy bound needs integer d >= 3, got {d}")
    if not 0.0 < eps < 1.0:
        raise ContractError(f"eps must lie in (0, 1), got {eps}")
    return 2.0 * math.exp(-(d - 2) * eps * eps / 2.0)


def uniform_sphere(n, d, seed, stream=0):
    """``n`` independent uniform points on S^{d-1} (normalized Gaussians)."""
    g = philox(seed, stream).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def exceedance_frequency(d, eps, trials, seed, chunk=10000):
    """Monte-Carlo frequency of |<u, v>| > eps over uniform pairs.

    Chunk ``c`` draws from its own stream so results do not depend on how
    many chunks run.
    """
    hits = 0
    done = 0
    c = 0
    while done < trials:
        m = min(chunk, trials - done)
        u = uniform_sphere(m, d, seed, 2 * c)
        v = uniform_sphere(m, d, seed, 2 * c + 1)
        hits += int((np.abs(np.einsum("nd,nd->n", u, v)) > eps).sum())
        done += m
        c += 1
    return hits / trials


def pairwise_l2_table(h_a, h_b):
    """Rows ``(i, j, d_a(i, j), d_b(i, j))`` for every unordered pair i < j."""
    a = np.asarray(h_a, dtype=np.float64)
    b = np.asarray(h_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"sets must be row-aligned, got {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        raise ContractError("pairwise distances need at least two samples")
    i, j = np.triu_indices(a.shape[0], k=1)
    d_a = np.linalg.norm(a[i] - a[j], axis=1)
    d_b = np.linalg.norm(b[i] - b[j], axis=1)
    return np.column_stack([i, j, d_a, d_b])


def distance_deviation_fraction(table, rel=0.1):
    """Fraction of pairs whose distances differ by more than ``rel`` relative to d_a."""
    d_a, d_b = table[:, 2], table[:, 3]
    return float((np.abs(d_a - d_b) / np.maximum(d_a, 1e-9) > rel).mean())


def radial_histogram(angles, bins=36, signed=False):
    """Uniform bins over [0, pi] (or [-pi, pi] when ``signed``)."""
    if bins < 4:
        raise ContractError(f"need at least 4 bins, got {bins}")
    angles = np.asarray(angles, dtype=np.float64).ravel()
    lo = -math.pi if signed else 0.0
    # clip so values rounding a hair past the range still land in the end bins
    counts, edges = np.histogram(np.clip(angles, lo, math.pi), bins=bins, range=(lo, math.pi))
    return edges, counts


def write_histogram_csv(path, edges, counts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lo", "hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def write_table_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def histogram_svg(edges, counts, title="", size=320):
    """Self-contained SVG polar bar chart of a radial histogram."""
    c = size / 2.0
    r_max = c - 24.0
    peak = max(int(np.max(counts)), 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<circle cx="{c}" cy="{c}" r="{r_max}" fill="none" stroke="#bbb"/>',
             f'<line x1="{c - r_max}" y1="{c}" x2="{c + r_max}" y2="{c}" stroke="#ddd"/>']
    for lo, hi, n in zip(edges[:-1], edges[1:], counts):
        if n == 0:
            continue
        r = r_max * math.sqrt(n / peak)
        x0, y0 = c + r * math.cos(lo), c - r * math.sin(lo)
        x1, y1 = c + r * math.cos(hi), c - r * math.sin(hi)
        large = 1 if hi - lo > math.pi else 0
        parts.append(f'<path d="M{c:.2f},{c:.2f} L{x0:.2f},{y0:.2f} A{r:.2f},{r:.2f} 0 {large} 0 '
                     f'{x1:.2f},{y1:.2f} Z" fill="#4a7ab5" fill-opacity="0.75" stroke="#234"/>')
    if title:
        parts.append(f'<text x="{c}" y="16" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12">{escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


@dataclass
class InvarianceBatchSpec:
    """Anchor with one positive, ``k_near`` near-duplicate negatives and ``n_far`` orthogonal ones."""

    k_near: int = 1
    delta: float = 0.0
    n_far: int = 0
    dim: int = 16
    s_pos: float = 1.0

    def validate(self):
        if self.k_near < 1:
            if self.k_near == 0 and self.n_far == 0:
                raise ContractError("need at least one negative (k_near + n_far >= 1)")
            raise ContractError(f"k_near must be >= 1, got {self.k_near}")
        if self.n_far < 0:
            raise ContractError(f"n_far must be >= 0, got {self.n_far}")
        if not 0.0 <= self.delta < 1.0:
            raise ContractError(f"delta must lie in [0, 1), got {self.delta}")
        if self.dim < 3:
            raise ConstructionError(f"construction needs dim >= 3, got {self.dim}")
        if not -1.0 <= self.s_pos <= 1.0:
            raise ConstructionError(f"positive similarity {self.s_pos} is not realizable on the sphere")
        return self


@dataclass
class InvarianceBatch:
    anchor: np.ndarray
    positive: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def candidates(self):
        """Positive first, then every negative; rows of the contrast set."""
        return np.vstack([self.positive[None], self.near, self.far])


def _orthonormal_complement(a, count, rng):
    """``count`` unit vectors orthogonal to ``a`` via Gram-Schmidt on Gaussian draws."""
    d = a.shape[0]
    basis = [a]
    out = []
    while len(out) < count:
        v = rng.standard_normal(d)
        # once d-1 complement directions exist, reuse random combinations of them
        for b in basis if len(basis) < d else basis[:1]:
            v = v - (v @ b) * b
        n = np.linalg.norm(v)
        if n < 1e-8:
            continue
        v = v / n
        v = v - (v @ a) * a
        v = v / np.linalg.norm(v)
        out.append(v)
        if len(basis) < d:
            basis.append(v)
    return np.array(out).reshape(count, d)


def build_invariance_batch(spec, seed=0):
    """Realize the similarity pattern of ``spec`` exactly on the unit sphere.

    Raises:
        ConstructionError: when the pattern cannot be realized or the
            realized inner products miss their targets by more than 1e-12.
    """
    spec.validate()
    rng = philox(seed, 0)
    d = spec.dim
    a = rng.standard_normal(d)
    a /= np.linalg.norm(a)
    count = 1 + spec.k_near + spec.n_far
    u = _orthonormal_complement(a, count, rng)

    def at(c, w):
        return c * a + math.sqrt(max(0.0, 1.0 - c * c)) * w

    positive = at(spec.s_pos, u[0])
    near = np.array([at(1.0 - spec.delta, w) for w in u[1:1 + spec.k_near]]).reshape(spec.k_near, d)
    far = u[1 + spec.k_near:].copy()
    batch = InvarianceBatch(a, positive, near, far)

    target = np.concatenate([[spec.s_pos], np.full(spec.k_near, 1.0 - spec.delta), np.zeros(spec.n_far)])
    rows = batch.candidates()
    got = rows @ a
    err = max(float(np.abs(got - target).max()), float(np.abs(np.linalg.norm(rows, axis=1) - 1.0).max()),
              abs(float(np.linalg.norm(a)) - 1.0))
    if err > CONSTRUCTION_TOLERANCE:
        raise ConstructionError(f"realized similarities off by {err:.3e}")
    return batch


def ntxent_lower_bound(k, delta, tau):
    """log(1 + K exp(-delta / tau)); log(K + 1) for exact duplicates."""
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    if not 0.0 <= delta < 1.0:
        raise ContractError(f"delta must lie in [0, 1), got {delta}")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    return math.log1p(k * math.exp(-delta / tau))


@dataclass
class BoundCheckReport:
    measured_loss: float
    analytic_bound: float
    slack: float
    passed: bool
    spec: InvarianceBatchSpec = None
    tau: float = None

    def line(self):
        s = self.spec
        return (f"K={s.k_near} delta={s.delta:g} R={s.n_far} tau={self.tau:g} "
                f"measured={self.measured_loss:.9f} bound={self.analytic_bound:.9f} "
                f"slack={self.slack:.3e} {'pass' if self.passed else 'FAIL'}")


def check_invariance_bound(spec, tau, seed=0):
    """Evaluate NT-Xent on a constructed batch and compare with the analytic bound.

    The anchor is scored against the contrast set through
    :func:`frameproj.objectives.ntxent_pair` with the positive kept in the
    denominator.
    """
    batch = build_invariance_batch(spec, seed)
    others = batch.candidates()
    anchors = np.vstack([batch.anchor[None], others[1:]])
    measured = float(ntxent_pair(anchors, others, tau, include_positive=True).data[0])
    bound = ntxent_lower_bound(spec.k_near, spec.delta, tau)
    slack = measured - bound
    return BoundCheckReport(measured, bound, slack, slack >= -BOUND_TOLERANCE, spec, tau)


def invariance_sweep(ks=(1, 2, 4, 8), deltas=(0.0, 0.1), taus=(0.2, 0.5, 1.0), n_far=0, dim=16, seed=0):
    """Bound reports over the full grid, in K-major order."""
    return [check_invariance_bound(InvarianceBatchSpec(k, dl, n_far, dim), tau, seed)
            for k in ks for dl in deltas for tau in taus]
