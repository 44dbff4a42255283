"""Anchor-free detection head, appearance embedder, and training losses.

The head is deliberately small: per-level 1x1 linear predictors over the
fused pyramid produce objectness, class logits, and box offsets per cell.
Ground truth assigns each box to the cell containing its center at the
finest level; all other cells are objectness negatives.

Box decode per cell ``(row, col)`` with stride ``s``:

    cx = (col + 0.5 + dx) * s      w = exp(dw) * s
    cy = (row + 0.5 + dy) * s      h = exp(dh) * s

which keeps sizes positive and reads offsets in stride units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .fusion import roi_max_pool
from .nn import Linear, Module
from .tensor import (
    Tensor,
    concat,
    log_softmax,
    maximum,
    minimum,
    softmax,
    unit_normalize,
    vector_norm,
)


@dataclass
class Detection:
    box: np.ndarray  # (cx, cy, w, h) pixels
    score: float
    class_id: int = 0
    embedding: np.ndarray | None = None

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=np.float64)
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError(f"detection box has non-positive size: {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


def iou(box_a, box_b) -> float:
    """Intersection over union of two center-format boxes."""
    a = np.asarray(box_a, dtype=np.float64)
    b = np.asarray(box_b, dtype=np.float64)
    if a[2] <= 0 or a[3] <= 0 or b[2] <= 0 or b[3] <= 0:
        raise ValueError("iou requires positive box sizes")
    return float(kernels.iou_matrix(a.reshape(1, 4), b.reshape(1, 4))[0, 0])


def iou_tensor(pred_boxes: Tensor, gt_boxes) -> Tensor:
    """Differentiable elementwise IoU between [N, 4] predictions and targets."""
    gt = Tensor(np.asarray(gt_boxes, dtype=np.float64))
    px0 = pred_boxes[:, 0] - pred_boxes[:, 2] * 0.5
    px1 = pred_boxes[:, 0] + pred_boxes[:, 2] * 0.5
    py0 = pred_boxes[:, 1] - pred_boxes[:, 3] * 0.5
    py1 = pred_boxes[:, 1] + pred_boxes[:, 3] * 0.5
    gx0 = gt[:, 0] - gt[:, 2] * 0.5
    gx1 = gt[:, 0] + gt[:, 2] * 0.5
    gy0 = gt[:, 1] - gt[:, 3] * 0.5
    gy1 = gt[:, 1] + gt[:, 3] * 0.5
    iw = maximum(minimum(px1, gx1) - maximum(px0, gx0), 0.0)
    ih = maximum(minimum(py1, gy1) - maximum(py0, gy0), 0.0)
    inter = iw * ih
    union = pred_boxes[:, 2] * pred_boxes[:, 3] + gt[:, 2] * gt[:, 3] - inter
    return inter / union


def nms(detections, iou_thresh):
    """Greedy non-maximum suppression; keeps the highest-scored of any
    overlapping pair (ties broken by input order)."""
    if not detections:
        return []
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    boxes = np.stack([detections[i].box for i in order])
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for i in range(len(order)):
        if suppressed[i]:
            continue
        keep.append(detections[order[i]])
        if i + 1 < len(order):
            overlaps = kernels.iou_matrix(boxes[i : i + 1], boxes[i + 1 :])[0]
            suppressed[i + 1 :] |= overlaps > iou_thresh
    return keep


@dataclass
class HeadConfig:
    num_classes: int = 1
    conf_thresh: float = 0.01
    nms_iou: float = 0.1
    reg_weight: float = 5.0  # loss balance between regression and the rest
    embed_dim: int = 8

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")


class DetectionHead(Module):
    """Per-level 1x1 predictors for objectness, class logits, box offsets."""

    def __init__(self, level_channels, strides, cfg: HeadConfig, rng):
        self.cfg = cfg
        self.strides = list(strides)
        self.obj_pred = [Linear(c, 1, rng) for c in level_channels]
        self.cls_pred = [Linear(c, cfg.num_classes, rng) for c in level_channels]
        self.box_pred = [Linear(c, 4, rng) for c in level_channels]

    def level_logits(self, index, grid):
        t = grid if isinstance(grid, Tensor) else Tensor(grid)
        height, width, channels = t.shape
        flat = t.reshape(height * width, channels)
        return (
            self.obj_pred[index](flat),
            self.cls_pred[index](flat),
            self.box_pred[index](flat),
        )

    def decode_cell_boxes(self, index, box_logits: Tensor, height, width) -> Tensor:
        """Decode per-cell box logits [D, 4] into pixel boxes [D, 4]."""
        stride = float(self.strides[index])
        cols, rows = np.meshgrid(np.arange(width), np.arange(height))
        cx = (box_logits[:, 0] + Tensor(cols.reshape(-1) + 0.5)) * stride
        cy = (box_logits[:, 1] + Tensor(rows.reshape(-1) + 0.5)) * stride
        w = box_logits[:, 2].exp() * stride
        h = box_logits[:, 3].exp() * stride
        return concat(
            [t.reshape(-1, 1) for t in (cx, cy, w, h)], axis=1
        )

    def decode(self, grids, embedder=None, conf_thresh=None, nms_iou=None):
        """Run the head over pyramid grids and return NMS-filtered detections.

        ``grids`` is a list of [H, W, C] arrays or Tensors (one per level);
        embeddings are pooled from the finest level when an embedder is given.
        """
        conf = self.cfg.conf_thresh if conf_thresh is None else conf_thresh
        nms_gate = self.cfg.nms_iou if nms_iou is None else nms_iou
        candidates = []
        for index, grid in enumerate(grids):
            arr = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
            height, width = arr.shape[:2]
            obj, cls, box = self.level_logits(index, arr)
            obj_prob = obj.sigmoid().data.reshape(-1)
            cls_prob = softmax(cls, axis=-1).data.max(axis=-1)
            scores = obj_prob * cls_prob
            class_ids = cls.data.argmax(axis=-1)
            boxes = self.decode_cell_boxes(index, box, height, width).data
            for cell in np.flatnonzero(scores >= conf):
                candidates.append(
                    Detection(
                        boxes[cell],
                        float(scores[cell]),
                        class_id=int(class_ids[cell]),
                    )
                )
        kept = nms(candidates, nms_gate)
        if embedder is not None:
            finest = grids[0]
            for det in kept:
                det.embedding = embedder.embed(finest, det.box, self.strides[0]).data.copy()
        return kept


@dataclass
class DetectionLosses:
    reg: Tensor
    cls: Tensor
    obj: Tensor
    total: Tensor


def detection_losses(head: DetectionHead, grids, gt_boxes, gt_classes=None) -> DetectionLosses:
    """Losses over one frame: -log IoU regression at positive cells,
    cross-entropy class loss at positive cells, BCE objectness over all
    cells of all levels.  With no ground truth the regression and class
    terms are zero.

    The IoU inside the log is floored at 1e-9 so a disjoint early-training
    box yields a large finite penalty instead of -log(0).
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n_gt = gt_boxes.shape[0]
    if gt_classes is None:
        gt_classes = np.zeros(n_gt, dtype=np.int64)

    finest = grids[0]
    arr0 = finest.data if isinstance(finest, Tensor) else np.asarray(finest)
    height0, width0 = arr0.shape[:2]
    stride0 = head.strides[0]
    cols = np.clip((gt_boxes[:, 0] / stride0).astype(np.int64), 0, width0 - 1)
    rows = np.clip((gt_boxes[:, 1] / stride0).astype(np.int64), 0, height0 - 1)
    pos_cells = rows * width0 + cols

    zero = Tensor(0.0)
    reg_loss = zero
    cls_loss = zero
    obj_terms = []
    for index, grid in enumerate(grids):
        t = grid if isinstance(grid, Tensor) else Tensor(grid)
        height, width = t.shape[0], t.shape[1]
        obj, cls, box = head.level_logits(index, t)
        targets = np.zeros(height * width)
        if index == 0 and n_gt > 0:
            targets[pos_cells] = 1.0
            picked = box[pos_cells]
            stride = float(head.strides[index])
            cx = (picked[:, 0] + Tensor(cols + 0.5)) * stride
            cy = (picked[:, 1] + Tensor(rows + 0.5)) * stride
            w = picked[:, 2].exp() * stride
            h = picked[:, 3].exp() * stride
            pred_boxes = concat([t2.reshape(-1, 1) for t2 in (cx, cy, w, h)], axis=1)
            overlap = maximum(iou_tensor(pred_boxes, gt_boxes), 1e-9)
            reg_loss = -(overlap.log().mean())
            if head.cfg.num_classes > 1:
                logp = log_softmax(cls[pos_cells], axis=-1)
                cls_loss = -(logp[np.arange(n_gt), gt_classes].mean())
            else:
                cls_loss = (cls[pos_cells] * 0.0).sum()
        # stable BCE with logits: y*softplus(-z) + (1-y)*softplus(z)
        z = obj.reshape(-1)
        y = Tensor(targets)
        obj_terms.append((y * (-z).softplus() + (1.0 - y) * z.softplus()).sum())
    n_cells = sum(
        (g.shape[0] * g.shape[1]) for g in grids
    )
    obj_loss = sum(obj_terms[1:], obj_terms[0]) * (1.0 / n_cells)
    total = head.cfg.reg_weight * reg_loss + obj_loss + cls_loss
    return DetectionLosses(reg_loss, cls_loss, obj_loss, total)


class AppearanceEmbedder(Module):
    """Unit-normalized linear projection of ROI-pooled features."""

    def __init__(self, in_dim, embed_dim, rng):
        self.proj = Linear(in_dim, embed_dim, rng)

    def embed(self, grid, box, stride) -> Tensor:
        pooled = roi_max_pool(grid, box, stride)
        return unit_normalize(self.proj(pooled), axis=-1)


def association_loss(frame_embeddings, tracklet_means: Tensor) -> Tensor:
    """Identity log-likelihood over a window of frames.

    ``frame_embeddings`` is a list of ``(embeddings, tracklet_index)`` pairs,
    one per frame: unit detection embeddings [n_j, d] and the index of the
    tracklet each detection belongs to.  Per detection the probability of
    its own tracklet is a softmax (temperature 1) over cosine similarities
    to all tracklet mean embeddings; the loss sums -log P over every
    matched detection in the window.  Empty windows contribute 0.
    """
    if tracklet_means.shape[0] == 0:
        return Tensor(0.0)
    means_unit = tracklet_means / vector_norm(tracklet_means, axis=-1, keepdims=True)
    total = Tensor(0.0)
    for embeddings, owners in frame_embeddings:
        owners = np.asarray(owners, dtype=np.int64)
        if owners.size == 0:
            continue
        sims = embeddings @ means_unit.transpose((1, 0))
        logp = log_softmax(sims, axis=-1)
        total = total - logp[np.arange(owners.size), owners].sum()
    return total
