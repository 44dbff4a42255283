"""Hot numeric kernels with switchable numba / pure-numpy backends.

The backend is chosen at import time from the ``SWARMTRACK_NUMBA``
environment variable: ``0``/``off``/``numpy`` forces the pure-numpy
fallback, ``1``/``numba`` requires numba, anything else ("auto") uses numba
when it imports cleanly.  :func:`set_backend` switches at runtime, which the
test suite and ``benchmarks/kernel_bench.py`` use to compare both paths.

Kernels
-------
lsap_minimize   rectangular linear sum assignment (minimization)
iou_matrix      pairwise IoU of center-format boxes
splat_forward   truncated-Gaussian feature splatting onto a grid
splat_backward  gradients of the splat w.r.t. features and centers
"""

import os

import numpy as np

from . import _numpy_impl

_BACKENDS = {"numpy": _numpy_impl}
_active_name = "numpy"


def _try_load_numba():
    if "numba" in _BACKENDS:
        return True
    try:
        from . import _numba_impl
    except ImportError:
        return False
    _BACKENDS["numba"] = _numba_impl
    return True


def available_backends():
    _try_load_numba()
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend ('numpy' or 'numba')."""
    global _active_name
    if name == "numba" and not _try_load_numba():
        raise RuntimeError("numba backend requested but numba is not importable")
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}")
    _active_name = name


def get_backend():
    return _active_name


def _init_from_env():
    flag = os.environ.get("SWARMTRACK_NUMBA", "auto").strip().lower()
    if flag in ("0", "off", "false", "numpy"):
        set_backend("numpy")
    elif flag in ("1", "on", "true", "numba"):
        set_backend("numba")
    else:
        set_backend("numba" if _try_load_numba() else "numpy")


def lsap_minimize(cost):
    """Optimal one-to-one assignment minimizing total cost.

    Accepts any rectangular float matrix; returns ``(rows, cols)`` index
    arrays of length ``min(cost.shape)`` with rows sorted ascending.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if cost.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite values")
    impl = _BACKENDS[_active_name]
    if cost.shape[0] <= cost.shape[1]:
        col4row = impl.lsap_solve(cost)
        rows = np.arange(cost.shape[0], dtype=np.int64)
        return rows, col4row
    col4row = impl.lsap_solve(np.ascontiguousarray(cost.T))
    order = np.argsort(col4row)
    return col4row[order], np.arange(cost.shape[1], dtype=np.int64)[order]


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between center-format ``(cx, cy, w, h)`` box arrays."""
    boxes_a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    return _BACKENDS[_active_name].iou_matrix(boxes_a, boxes_b)


def splat_forward(centers, feats, height, width, sigma, radius):
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    channels = feats.shape[1] if feats.ndim == 2 else 0
    return _BACKENDS[_active_name].splat_forward(
        centers, feats, height, width, channels, sigma, radius
    )


def splat_backward(centers, feats, grad, sigma, radius):
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    return _BACKENDS[_active_name].splat_backward(centers, feats, grad, sigma, radius)


_init_from_env()
