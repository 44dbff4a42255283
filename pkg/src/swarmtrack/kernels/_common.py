"""Loop-style kernel bodies shared by the numpy and numba backends.

Everything in this module is written in nopython-compatible style (plain
loops over preallocated arrays) so the numba backend can compile the exact
same source that the numpy backend runs as ordinary Python.
"""

import numpy as np


def lsap_body(cost):
    """Solve the dense rectangular assignment problem, minimizing total cost.

    Shortest-augmenting-path algorithm with dual potentials (the classic
    Jonker-Volgenant scheme).  Requires ``rows <= cols``; callers transpose
    first when needed.  Returns ``col4row`` where ``col4row[i]`` is the
    column assigned to row ``i``.
    """
    n_rows, n_cols = cost.shape
    u = np.zeros(n_rows)
    v = np.zeros(n_cols)
    path = np.full(n_cols, -1, dtype=np.int64)
    col4row = np.full(n_rows, -1, dtype=np.int64)
    row4col = np.full(n_cols, -1, dtype=np.int64)

    for cur_row in range(n_rows):
        shortest = np.full(n_cols, np.inf)
        scanned_rows = np.zeros(n_rows, dtype=np.bool_)
        scanned_cols = np.zeros(n_cols, dtype=np.bool_)
        remaining = np.empty(n_cols, dtype=np.int64)
        num_remaining = n_cols
        for jp in range(n_cols):
            # filled in reverse so ties resolve toward lower column indices
            remaining[jp] = n_cols - 1 - jp

        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            index = -1
            lowest = np.inf
            scanned_rows[i] = True
            for it in range(num_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (
                    shortest[j] == lowest and row4col[j] == -1
                ):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            scanned_cols[j] = True
            num_remaining -= 1
            remaining[index] = remaining[num_remaining]

        u[cur_row] += min_val
        for ip in range(n_rows):
            if scanned_rows[ip] and ip != cur_row:
                u[ip] += min_val - shortest[col4row[ip]]
        for jp in range(n_cols):
            if scanned_cols[jp]:
                v[jp] -= min_val - shortest[jp]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            swap = col4row[i]
            col4row[i] = j
            j = swap
            if i == cur_row:
                break
    return col4row


def iou_matrix_body(boxes_a, boxes_b, out):
    """Pairwise IoU of center-format boxes ``(cx, cy, w, h)`` into ``out``."""
    na = boxes_a.shape[0]
    nb = boxes_b.shape[0]
    for i in range(na):
        ax0 = boxes_a[i, 0] - 0.5 * boxes_a[i, 2]
        ax1 = boxes_a[i, 0] + 0.5 * boxes_a[i, 2]
        ay0 = boxes_a[i, 1] - 0.5 * boxes_a[i, 3]
        ay1 = boxes_a[i, 1] + 0.5 * boxes_a[i, 3]
        area_a = boxes_a[i, 2] * boxes_a[i, 3]
        for j in range(nb):
            bx0 = boxes_b[j, 0] - 0.5 * boxes_b[j, 2]
            bx1 = boxes_b[j, 0] + 0.5 * boxes_b[j, 2]
            by0 = boxes_b[j, 1] - 0.5 * boxes_b[j, 3]
            by1 = boxes_b[j, 1] + 0.5 * boxes_b[j, 3]
            iw = min(ax1, bx1) - max(ax0, bx0)
            ih = min(ay1, by1) - max(ay0, by0)
            if iw > 0.0 and ih > 0.0:
                inter = iw * ih
                union = area_a + boxes_b[j, 2] * boxes_b[j, 3] - inter
                out[i, j] = inter / union
            else:
                out[i, j] = 0.0
    return out


def splat_forward_body(centers, feats, out, sigma, radius):
    """Accumulate truncated Gaussian feature bumps into ``out`` [H, W, C].

    ``centers`` are grid coordinates (col, row); the Gaussian is sampled at
    cell centers ``(x + 0.5, y + 0.5)`` and truncated beyond ``radius``.
    """
    height, width, channels = out.shape
    n = centers.shape[0]
    inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
    for i in range(n):
        cx = centers[i, 0]
        cy = centers[i, 1]
        x_lo = int(np.ceil(cx - 0.5 - radius))
        x_hi = int(np.floor(cx - 0.5 + radius))
        y_lo = int(np.ceil(cy - 0.5 - radius))
        y_hi = int(np.floor(cy - 0.5 + radius))
        if x_lo < 0:
            x_lo = 0
        if y_lo < 0:
            y_lo = 0
        if x_hi > width - 1:
            x_hi = width - 1
        if y_hi > height - 1:
            y_hi = height - 1
        for y in range(y_lo, y_hi + 1):
            dy = (y + 0.5) - cy
            for x in range(x_lo, x_hi + 1):
                dx = (x + 0.5) - cx
                w = np.exp(-(dx * dx + dy * dy) * inv_two_sigma_sq)
                for c in range(channels):
                    out[y, x, c] += w * feats[i, c]
    return out


def splat_backward_body(centers, feats, grad, grad_feats, grad_centers, sigma, radius):
    """Gradients of :func:`splat_forward_body` w.r.t. features and centers."""
    height, width, channels = grad.shape
    n = centers.shape[0]
    inv_sigma_sq = 1.0 / (sigma * sigma)
    inv_two_sigma_sq = 0.5 * inv_sigma_sq
    for i in range(n):
        cx = centers[i, 0]
        cy = centers[i, 1]
        x_lo = int(np.ceil(cx - 0.5 - radius))
        x_hi = int(np.floor(cx - 0.5 + radius))
        y_lo = int(np.ceil(cy - 0.5 - radius))
        y_hi = int(np.floor(cy - 0.5 + radius))
        if x_lo < 0:
            x_lo = 0
        if y_lo < 0:
            y_lo = 0
        if x_hi > width - 1:
            x_hi = width - 1
        if y_hi > height - 1:
            y_hi = height - 1
        for y in range(y_lo, y_hi + 1):
            dy = (y + 0.5) - cy
            for x in range(x_lo, x_hi + 1):
                dx = (x + 0.5) - cx
                w = np.exp(-(dx * dx + dy * dy) * inv_two_sigma_sq)
                dot = 0.0
                for c in range(channels):
                    g = grad[y, x, c]
                    grad_feats[i, c] += w * g
                    dot += feats[i, c] * g
                grad_centers[i, 0] += dot * w * dx * inv_sigma_sq
                grad_centers[i, 1] += dot * w * dy * inv_sigma_sq
    return grad_feats, grad_centers
