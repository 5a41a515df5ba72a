"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_kernels_py`` take over. Setting the environment
variable ``FRAMEPROJ_BACKEND=python`` forces the fallback.
"""

import logging
import os

import numpy as np

from . import _kernels_py

logger = logging.getLogger(__name__)

_impls = {"python": _kernels_py}
try:
    from . import _ckernels  # type: ignore[attr-defined]

    _impls["compiled"] = _ckernels
except ImportError:  # pragma: no cover - depends on build
    logger.debug("compiled kernels unavailable, using numpy fallback")

_requested = os.environ.get("FRAMEPROJ_BACKEND", "compiled")
BACKEND = _requested if _requested in _impls else "python"
_active = _impls[BACKEND]


def available_backends():
    return sorted(_impls)


def use_backend(name):
    """Switch the active backend at runtime (used by tests and benchmarks)."""
    global BACKEND, _active
    if name not in _impls:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    BACKEND = name
    _active = _impls[name]


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, stride, padding):
    return _active.conv2d_forward(_c(x), _c(w), stride[0], stride[1], padding[0], padding[1])


def conv2d_backward_input(gy, w, in_hw, stride, padding):
    return _active.conv2d_backward_input(
        _c(gy), _c(w), in_hw[0], in_hw[1], stride[0], stride[1], padding[0], padding[1]
    )


def conv2d_backward_weight(x, gy, k_hw, stride, padding):
    return _active.conv2d_backward_weight(
        _c(x), _c(gy), k_hw[0], k_hw[1], stride[0], stride[1], padding[0], padding[1]
    )


def cwt_direct(x, scales, sigma, xi, radius):
    """Complex wavelet coefficients, shape (M, S, L), for rows of ``x``."""
    return _active.cwt_direct(_c(np.atleast_2d(x)), _c(scales), float(sigma), float(xi), float(radius))
