"""Numba-compiled kernel implementations.

Importing this module requires numba; the dispatch layer falls back to the
numpy backend when the import fails or SWARMTRACK_NUMBA disables it.
"""

import numpy as np
from numba import njit

from . import _common

_JIT = {"cache": True, "nogil": True}

lsap_solve = njit(**_JIT)(_common.lsap_body)
_iou_matrix_body = njit(**_JIT)(_common.iou_matrix_body)
_splat_forward_body = njit(**_JIT)(_common.splat_forward_body)
_splat_backward_body = njit(**_JIT)(_common.splat_backward_body)


def iou_matrix(boxes_a, boxes_b):
    out = np.empty((boxes_a.shape[0], boxes_b.shape[0]))
    if out.size == 0:
        return out
    return _iou_matrix_body(boxes_a, boxes_b, out)


def splat_forward(centers, feats, height, width, channels, sigma, radius):
    out = np.zeros((height, width, channels))
    if centers.shape[0] == 0:
        return out
    return _splat_forward_body(centers, feats, out, sigma, radius)


def splat_backward(centers, feats, grad, sigma, radius):
    grad_feats = np.zeros_like(feats)
    grad_centers = np.zeros_like(centers)
    if centers.shape[0] == 0:
        return grad_feats, grad_centers
    return _splat_backward_body(
        centers, feats, grad, grad_feats, grad_centers, sigma, radius
    )
