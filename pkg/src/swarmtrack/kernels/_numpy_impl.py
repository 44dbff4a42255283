"""Pure-numpy kernel implementations (the fallback backend)."""

import numpy as np

from ._common import lsap_body


def lsap_solve(cost):
    return lsap_body(cost)


def iou_matrix(boxes_a, boxes_b):
    if boxes_a.shape[0] == 0 or boxes_b.shape[0] == 0:
        return np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
    ax0 = boxes_a[:, 0] - 0.5 * boxes_a[:, 2]
    ax1 = boxes_a[:, 0] + 0.5 * boxes_a[:, 2]
    ay0 = boxes_a[:, 1] - 0.5 * boxes_a[:, 3]
    ay1 = boxes_a[:, 1] + 0.5 * boxes_a[:, 3]
    bx0 = boxes_b[:, 0] - 0.5 * boxes_b[:, 2]
    bx1 = boxes_b[:, 0] + 0.5 * boxes_b[:, 2]
    by0 = boxes_b[:, 1] - 0.5 * boxes_b[:, 3]
    by1 = boxes_b[:, 1] + 0.5 * boxes_b[:, 3]
    iw = np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :])
    ih = np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :])
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    area_a = boxes_a[:, 2] * boxes_a[:, 3]
    area_b = boxes_b[:, 2] * boxes_b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def _window(center, radius, size):
    lo = int(np.ceil(center - 0.5 - radius))
    hi = int(np.floor(center - 0.5 + radius))
    return max(lo, 0), min(hi, size - 1)


def splat_forward(centers, feats, height, width, channels, sigma, radius):
    out = np.zeros((height, width, channels))
    inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
    for i in range(centers.shape[0]):
        cx, cy = centers[i]
        x_lo, x_hi = _window(cx, radius, width)
        y_lo, y_hi = _window(cy, radius, height)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        xs = np.arange(x_lo, x_hi + 1) + 0.5 - cx
        ys = np.arange(y_lo, y_hi + 1) + 0.5 - cy
        w = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) * inv_two_sigma_sq)
        out[y_lo : y_hi + 1, x_lo : x_hi + 1] += w[:, :, None] * feats[i]
    return out


def splat_backward(centers, feats, grad, sigma, radius):
    height, width, _ = grad.shape
    grad_feats = np.zeros_like(feats)
    grad_centers = np.zeros_like(centers)
    inv_sigma_sq = 1.0 / (sigma * sigma)
    inv_two_sigma_sq = 0.5 * inv_sigma_sq
    for i in range(centers.shape[0]):
        cx, cy = centers[i]
        x_lo, x_hi = _window(cx, radius, width)
        y_lo, y_hi = _window(cy, radius, height)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        xs = np.arange(x_lo, x_hi + 1) + 0.5 - cx
        ys = np.arange(y_lo, y_hi + 1) + 0.5 - cy
        w = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) * inv_two_sigma_sq)
        g = grad[y_lo : y_hi + 1, x_lo : x_hi + 1]
        grad_feats[i] = np.einsum("yx,yxc->c", w, g)
        dot = g @ feats[i]
        grad_centers[i, 0] = np.sum(dot * w * xs[None, :]) * inv_sigma_sq
        grad_centers[i, 1] = np.sum(dot * w * ys[:, None]) * inv_sigma_sq
    return grad_feats, grad_centers
