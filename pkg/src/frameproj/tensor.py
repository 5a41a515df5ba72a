"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation that touches a tensor with ``requires_grad`` records a node
holding its parents and a closure mapping the output gradient to parent
gradients. :func:`backward` walks those nodes in reverse topological order
exactly once; a consumed graph raises :class:`TapeStateError` on reuse.

Broadcasting is limited to scalar operands and the channel bias-add pattern
(:func:`add_bias`). Everything else needs matching shapes.
"""

import contextlib
import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .binfmt import read_tensor, write_tensor
from .errors import (
    ContractError,
    DimensionError,
    NumericDomainError,
    NumericOverflowError,
    TapeStateError,
)

_grad_enabled = True
_kink_log = None  # list collecting sign patterns of piecewise-linear ops, when active


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _record_kinks():
    global _kink_log
    prev = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _note_kink(pattern):
    if _kink_log is not None:
        _kink_log.append(np.packbits(pattern).tobytes())


class _Node:
    __slots__ = ("parents", "backward_fn", "consumed", "op")

    def __init__(self, parents, backward_fn, op):
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False, _node=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = _node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(out, op):
    if not np.isfinite(out).all():
        raise NumericOverflowError(f"{op} produced non-finite values")
    return out


def _make(out, parents, backward_fn, op):
    _check_finite(out, op)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(out)
    return Tensor(out, requires_grad=True, _node=_Node(parents, backward_fn, op))


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``.

    Gradients accumulate into existing ``.grad`` buffers, so call
    ``zero_grad`` between independent passes.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    if loss._node.consumed:
        raise TapeStateError("this graph has already been consumed by a backward pass")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            if t._node.consumed:
                raise TapeStateError("graph shares nodes with a consumed graph")
            for p in reversed(t._node.parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    grads = {id(loss): seed}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        node = t._node
        if node is None:
            if g is not None:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        if g is not None:
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
        node.consumed = True
        node.backward_fn = None
        node.parents = ()


# ----------------------------------------------------------------------
# elementwise


def _binary_shapes(a, b, op):
    if a.shape == b.shape:
        return
    if a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _unreduce(g, shape):
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unreduce(g, sa), _unreduce(g, sb)), "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unreduce(g, sa), _unreduce(-g, sb)), "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unreduce(g * bd, ad.shape), _unreduce(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(x, b):
    """Add a per-channel bias ``b`` (C,) along axis 1 of ``x`` (N, C, ...)."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match channels of {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    return _make(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


def relu(a):
    mask = a.data > 0
    _note_kink(mask)
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if (a.data <= 0).any():
        raise NumericDomainError("log requires strictly positive inputs")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    if (a.data < 0).any():
        raise NumericDomainError("sqrt requires non-negative inputs")
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore"):
            return (_check_finite(0.5 * g / out, "sqrt backward"),)

    return _make(out, (a,), bw, "sqrt")


def absolute(a):
    sign = np.sign(a.data)
    _note_kink(sign > 0)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


# ----------------------------------------------------------------------
# shape manipulation and reductions


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError("transpose expects a matrix")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def _check_nonempty(a, op):
    if a.data.size == 0:
        raise DimensionError(f"{op} of an empty tensor")


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    _check_nonempty(a, "sum")
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a, axis=None):
    _check_nonempty(a, "mean")
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def global_avg_pool(x):
    """(N, C, L) -> (N, C) mean over the length axis."""
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool expects (N, C, L), got {x.shape}")
    return mean(x, axis=2)


def l1_norm(a):
    return sum(absolute(a))


def logsumexp(a, axis=1):
    """Row-wise log-sum-exp of a matrix with max subtraction."""
    if a.ndim != 2:
        raise DimensionError("logsumexp expects a matrix")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,), "logsumexp")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def l2_normalize(v, eps=1e-12):
    """Divide each row of ``v`` by ``max(||row||, eps)``."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    if v.ndim != 2:
        raise DimensionError("l2_normalize expects (N, d)")
    norms = np.sqrt((v.data * v.data).sum(axis=1, keepdims=True))
    big = norms > eps
    denom = np.where(big, norms, eps)
    out = v.data / denom

    def bw(g):
        radial = (out * g).sum(axis=1, keepdims=True)
        return (np.where(big, (g - out * radial) / denom, g / eps),)

    return _make(out, (v,), bw, "l2_normalize")


# ----------------------------------------------------------------------
# convolution and pooling


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlation of (N, Cin, H, W) with kernels (Cout, Cin, KH, KW)."""
    stride, padding = _pair(stride), _pair(padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if min(stride) < 1:
        raise ContractError("stride must be >= 1")
    kh, kw = w.shape[2:]
    h, wd = x.shape[2:]
    if kh > h + 2 * padding[0] or kw > wd + 2 * padding[1]:
        raise DimensionError(f"kernel {w.shape[2:]} exceeds padded input {x.shape[2:]}")
    xd, wdt = x.data, w.data
    out = kernels.conv2d_forward(xd, wdt, stride, padding)

    def bw(g):
        gx = kernels.conv2d_backward_input(g, wdt, (h, wd), stride, padding) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(xd, g, (kh, kw), stride, padding) if w.requires_grad else None
        return gx, gw

    y = _make(out, (x, w), bw, "conv2d")
    return y if bias is None else add_bias(y, bias)


def conv1d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlation of (N, Cin, L) with kernels (Cout, Cin, K)."""
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d: expected 3-d input and kernel, got {x.shape}, {w.shape}")
    if stride < 1:
        raise ContractError("stride must be >= 1")
    if w.shape[2] > x.shape[2] + 2 * padding:
        raise DimensionError(f"kernel length {w.shape[2]} exceeds padded length {x.shape[2] + 2 * padding}")
    n, _, length = x.shape
    y = conv2d(reshape(x, (n, x.shape[1], 1, length)), reshape(w, w.shape[:2] + (1, w.shape[2])),
               stride=(1, stride), padding=(0, padding))
    y = reshape(y, (n, w.shape[0], y.shape[3]))
    return y if bias is None else add_bias(y, bias)


def conv_transpose1d(x, w, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv1d`.

    ``w`` has shape (Cin, Cout, K), i.e. the kernel of the conv1d this
    operation is the adjoint of. Output length is
    ``(L - 1) * stride - 2 * padding + K + output_padding``.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"conv_transpose1d: input {x.shape} incompatible with kernel {w.shape}")
    if not 0 <= output_padding < stride:
        raise ContractError("output_padding must satisfy 0 <= output_padding < stride")
    n, cin, length = x.shape
    k = w.shape[2]
    out_len = (length - 1) * stride - 2 * padding + k + output_padding
    if out_len < 1:
        raise DimensionError("conv_transpose1d output would be empty")
    st, pd = (1, stride), (0, padding)
    xd = x.data.reshape(n, cin, 1, length)
    wd = w.data.reshape(cin, w.shape[1], 1, k)
    out = kernels.conv2d_backward_input(xd, wd, (1, out_len), st, pd)

    def bw(g):
        g4 = g.reshape(n, w.shape[1], 1, out_len)
        gx = kernels.conv2d_forward(g4, wd, st, pd).reshape(x.shape) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(g4, xd, (1, k), st, pd).reshape(w.shape) if w.requires_grad else None
        return gx, gw

    y = _make(out.reshape(n, w.shape[1], out_len), (x, w), bw, "conv_transpose1d")
    return y if bias is None else add_bias(y, bias)


def _pool_matrix(n_in, n_out):
    """Averaging matrix (n_out, n_in) with adaptive bin edges."""
    p = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        p[i, lo:hi] = 1.0 / (hi - lo)
    return p


def adaptive_avg_pool2d(x, out_hw):
    """Average (N, C, H, W) into an (oh, ow) grid of (possibly uneven) bins."""
    if x.ndim != 4:
        raise DimensionError("adaptive_avg_pool2d expects (N, C, H, W)")
    oh, ow = out_hw
    h, wd = x.shape[2:]
    if not (1 <= oh <= h and 1 <= ow <= wd):
        raise DimensionError(f"cannot pool {x.shape[2:]} to {out_hw}")
    ph, pw = _pool_matrix(h, oh), _pool_matrix(wd, ow)
    out = np.einsum("ih,nchw,jw->ncij", ph, x.data, pw, optimize=True)
    return _make(out, (x,), lambda g: (np.einsum("ih,ncij,jw->nchw", ph, g, pw, optimize=True),),
                 "adaptive_avg_pool2d")


# ----------------------------------------------------------------------
# normalization and regularization


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over every axis except 1.

    In training mode batch statistics are used and the running buffers
    (plain numpy arrays) are updated in place; in eval mode the running
    buffers are used.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError("batch_norm parameters must have one entry per channel")
    axes = (0,) + tuple(range(2, x.ndim))
    view = (1, -1) + (1,) * (x.ndim - 2)
    gd = gamma.data.reshape(view)
    if training:
        m = x.data.size // c
        if m < 2:
            raise ContractError("batch_norm in training mode needs more than one value per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(view)) * inv.reshape(view)

        def bw(g):
            dxhat = g * gd
            s1 = dxhat.sum(axis=axes).reshape(view)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(view)
            gx = inv.reshape(view) / m * (m * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(view)) * inv.reshape(view)

        def bw(g):
            return g * gd * inv.reshape(view), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * gd + beta.data.reshape(view)
    return _make(out, (x, gamma, beta), bw, "batch_norm")


def dropout(x, p, rng, training):
    """Inverted dropout; identity when ``p == 0`` or outside training."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ----------------------------------------------------------------------
# losses built from primitives


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of (N, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError("one label per row required")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    picked = sum(mul(logits, Tensor(onehot)), axis=1)
    return mean(sub(logsumexp(logits, axis=1), picked))


# ----------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped_kinks: int


def grad_check_report(forward, params, step=1e-5):
    """Compare backprop against central differences coordinate by coordinate.

    ``forward`` is a zero-argument callable returning a scalar tensor built
    from ``params``. The relative error of a coordinate is
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)``. A coordinate whose two
    perturbed evaluations put some relu or abs input on opposite sides of
    zero is counted in ``skipped_kinks`` instead: the stencil straddles a
    point of non-differentiability and the difference quotient is not a
    derivative estimate there.
    """
    if not 0 < step <= 1e-3:
        raise ContractError("step must lie in (0, 1e-3]")
    for p in params:
        p.grad = None
    backward(forward())
    worst = 0.0
    checked = skipped = 0
    with no_grad():
        for p in params:
            g_ad = np.zeros_like(p.data) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                with _record_kinks() as up_signs:
                    up = forward().item()
                flat[i] = orig - step
                with _record_kinks() as down_signs:
                    down = forward().item()
                flat[i] = orig
                if up_signs != down_signs:
                    skipped += 1
                    continue
                g_fd = (up - down) / (2.0 * step)
                a = g_ad.reshape(-1)[i]
                err = abs(a - g_fd) / max(abs(a), abs(g_fd), 1e-8)
                worst = max(worst, err)
                checked += 1
    return GradCheckReport(worst, checked, skipped)


def grad_check(forward, params, step=1e-5):
    """Largest relative disagreement between backprop and central differences.

    See :func:`grad_check_report`; coordinates straddling a kink are skipped.
    """
    return grad_check_report(forward, params, step).max_rel_error


# ----------------------------------------------------------------------
# serialization


def save_tensor(path_or_file, t):
    data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "wb") as fh:
            write_tensor(fh, data)
    else:
        write_tensor(path_or_file, data)


def load_tensor(path_or_file):
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "rb") as fh:
            return Tensor(read_tensor(fh))
    return Tensor(read_tensor(path_or_file))


def to_bytes(t):
    buf = io.BytesIO()
    save_tensor(buf, t)
    return buf.getvalue()


def from_bytes(raw):
    return load_tensor(io.BytesIO(raw))
