"""Trajectory-guided feature fusion over multi-scale pyramids.

Given predicted tracklet positions and their pooled feature histories, a
truncated-Gaussian splat writes each tracklet's projected history into a
predictive map per pyramid level; two gated cross-attention stages then
blend that map with the current frame's features.  Output shapes always
equal input shapes, so fused pyramids drop into the detection head
unchanged.

Grid convention: a pixel position ``p`` maps to grid coordinate
``p / stride``; cell ``(row, col)`` samples at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .nn import Linear, Module, MultiHeadAttention
from .tensor import Tensor, ShapeError, concat

import struct


@dataclass
class PyramidLevel:
    stride: int
    grid: np.ndarray  # [H, W, C]

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3 or min(self.grid.shape) < 1:
            raise ShapeError("pyramid level grid must be [H, W, C] with H, W >= 1")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("pyramid level contains non-finite values")

    @property
    def shape(self):
        return self.grid.shape


@dataclass
class FeaturePyramid:
    levels: list[PyramidLevel]
    frame: int = 0

    def level_shapes(self):
        return [lv.shape for lv in self.levels]


@dataclass
class HistoryFeatures:
    """Per-tracklet pooled feature histories plus their source boxes."""

    feats: np.ndarray  # [N, T, f']
    boxes: np.ndarray  # [N, T, 4] center-format source boxes

    def __post_init__(self):
        self.feats = np.asarray(self.feats, dtype=np.float64)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)

    @property
    def count(self):
        return self.feats.shape[0]


def box_to_cells(box, stride, height, width):
    """Map a center-format pixel box onto grid cells, rounding outward.

    An empty intersection clamps to the single cell nearest the box center.
    Returns (y0, y1, x0, x1) as an inclusive-exclusive row/col range.
    """
    cx, cy, w, h = float(box[0]), float(box[1]), float(box[2]), float(box[3])
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box with size ({w}, {h})")
    x0 = int(np.floor((cx - 0.5 * w) / stride))
    x1 = int(np.ceil((cx + 0.5 * w) / stride))
    y0 = int(np.floor((cy - 0.5 * h) / stride))
    y1 = int(np.ceil((cy + 0.5 * h) / stride))
    x0, x1 = max(x0, 0), min(x1, width)
    y0, y1 = max(y0, 0), min(y1, height)
    if x0 >= x1:
        cell = int(np.clip(cx / stride, 0, width - 1))
        x0, x1 = cell, cell + 1
    if y0 >= y1:
        cell = int(np.clip(cy / stride, 0, height - 1))
        y0, y1 = cell, cell + 1
    return y0, y1, x0, x1


def roi_max_pool(grid, box, stride):
    """Channel-wise max over the grid cells covered by a pixel box."""
    t = grid if isinstance(grid, Tensor) else Tensor(grid)
    height, width = t.shape[0], t.shape[1]
    y0, y1, x0, x1 = box_to_cells(box, stride, height, width)
    return t[y0:y1, x0:x1, :].max(0).max(0)


def pool_history(pyramids, boxes, level=0):
    """Pool per-tracklet features at ``level`` over a window of pyramids.

    ``boxes`` is [N, T, 4] aligned with the T pyramids; returns
    :class:`HistoryFeatures` with [N, T, C_level] features.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    n, t = boxes.shape[:2]
    if t != len(pyramids):
        raise ShapeError(f"{t} box frames but {len(pyramids)} pyramids")
    channels = pyramids[0].levels[level].shape[2]
    feats = np.zeros((n, t, channels))
    for j, pyr in enumerate(pyramids):
        lv = pyr.levels[level]
        for i in range(n):
            feats[i, j] = roi_max_pool(lv.grid, boxes[i, j], lv.stride).data
    return HistoryFeatures(feats, boxes)


def splat_predictive_map(shape, centers_px, feats, sigma, stride, trunc_sigmas=6.0):
    """Sum truncated Gaussian feature bumps at predicted centers.

    ``centers_px`` [N, 2] are pixel positions (Tensor or array);
    ``feats`` [N, C] are the per-tracklet projected features.  Contributions
    beyond ``trunc_sigmas * sigma`` grid cells are dropped (< 2e-8 of the
    center value at the default 6 sigma).  Gradients flow to both the
    features and the centers.
    """
    height, width, channels = shape
    centers = centers_px if isinstance(centers_px, Tensor) else Tensor(centers_px)
    feats = feats if isinstance(feats, Tensor) else Tensor(feats)
    if centers.shape[0] == 0:
        return Tensor(np.zeros((height, width, channels)))
    if feats.shape != (centers.shape[0], channels):
        raise ShapeError(
            f"splat features {feats.shape} inconsistent with "
            f"{centers.shape[0]} centers and {channels} channels"
        )
    grid_centers = centers * (1.0 / stride)
    radius = trunc_sigmas * sigma

    def backward(g):
        grad_feats, grad_centers = kernels.splat_backward(
            grid_centers.data, feats.data, g, sigma, radius
        )
        if feats.requires_grad:
            feats._accumulate(grad_feats)
        if grid_centers.requires_grad:
            grid_centers._accumulate(grad_centers)

    out = kernels.splat_forward(
        grid_centers.data, feats.data, height, width, sigma, radius
    )
    return Tensor._node(out, (grid_centers, feats), backward)


class CrossAttentionFuser(Module):
    """Two gated cross-attention stages over a flattened feature map.

    Stage one correlates the current map (queries) with the predictive map
    (keys/values) under a sigmoid gate; stage two re-attends over the
    current map with the stage-one context concatenated onto queries and
    keys, added residually onto the input.
    """

    def __init__(self, channels, heads, rng):
        self.channels = channels
        self.gate1 = Linear(channels, channels, rng)
        self.attn1 = MultiHeadAttention(channels, channels, channels, channels, heads, rng)
        self.out1 = Linear(channels, channels, rng)
        self.gate2 = Linear(channels, channels, rng)
        self.attn2 = MultiHeadAttention(
            2 * channels, 2 * channels, channels, channels, heads, rng
        )
        self.out2 = Linear(channels, channels, rng)

    def __call__(self, current: Tensor, predictive: Tensor) -> Tensor:
        if current.shape != predictive.shape:
            raise ShapeError(
                f"level shapes differ: {current.shape} vs {predictive.shape}"
            )
        rows = current.shape[0]
        cur = current.reshape(1, rows, self.channels)
        pred = predictive.reshape(1, rows, self.channels)
        context = self.out1(self.gate1(cur).sigmoid() * self.attn1(cur, pred, pred))
        augmented = concat([cur, context], axis=-1)
        fused = cur + self.out2(
            self.gate2(cur).sigmoid() * self.attn2(augmented, augmented, cur)
        )
        return fused.reshape(rows, self.channels)


@dataclass
class FusionConfig:
    history_len: int = 8
    history_dim: int = 8  # f', channel width of the pooled history level
    sigma: float = 2.0  # grid cells
    heads: int = 4
    trunc_sigmas: float = 6.0


class PyramidFuser(Module):
    """Per-level splat + cross-attention fusion of a feature pyramid."""

    def __init__(self, level_shapes, strides, cfg: FusionConfig, rng):
        self.cfg = cfg
        self.strides = list(strides)
        self.channels = [shape[2] for shape in level_shapes]
        flat_hist = cfg.history_len * cfg.history_dim
        self.project = [Linear(flat_hist, c, rng) for c in self.channels]
        self.fusers = [CrossAttentionFuser(c, cfg.heads, rng) for c in self.channels]

    def fuse_level(self, index, grid, centers_px, history_flat):
        level_grid = grid if isinstance(grid, Tensor) else Tensor(grid)
        height, width, channels = level_grid.shape
        if history_flat is None:
            pmap = Tensor(np.zeros((height, width, channels)))
        else:
            feats = self.project[index](history_flat)
            pmap = splat_predictive_map(
                (height, width, channels),
                centers_px,
                feats,
                self.cfg.sigma,
                self.strides[index],
                self.cfg.trunc_sigmas,
            )
        flat_cur = level_grid.reshape(height * width, channels)
        flat_pred = pmap.reshape(height * width, channels)
        fused = self.fusers[index](flat_cur, flat_pred)
        return fused.reshape(height, width, channels)

    def fuse(self, pyramid: FeaturePyramid, centers_px, history: HistoryFeatures | None):
        """Fuse every level; returns a list of Tensors shaped like the input."""
        if history is not None and history.count > 0:
            n = history.count
            flat_hist = Tensor(
                history.feats.reshape(n, self.cfg.history_len * self.cfg.history_dim)
            )
        else:
            flat_hist = None
        fused_levels = []
        for idx, level in enumerate(pyramid.levels):
            fused_levels.append(
                self.fuse_level(idx, level.grid, centers_px, flat_hist)
            )
        return fused_levels

    def fuse_pyramid(self, pyramid, centers_px, history) -> FeaturePyramid:
        """Like :meth:`fuse` but returns a plain :class:`FeaturePyramid`."""
        fused = self.fuse(pyramid, centers_px, history)
        levels = [
            PyramidLevel(stride=lv.stride, grid=f.data.copy())
            for lv, f in zip(pyramid.levels, fused)
        ]
        return FeaturePyramid(levels, frame=pyramid.frame)


# -- pyramid serialization ---------------------------------------------------------

PYR_MAGIC = b"SWTPYR\x01"


def save_pyramids(path, pyramids):
    """Binary blob: magic, frame count, per frame level count and
    per level (stride, H, W, C, row-major float64 values)."""
    with open(path, "wb") as fh:
        fh.write(PYR_MAGIC)
        fh.write(struct.pack("<I", len(pyramids)))
        for pyr in pyramids:
            fh.write(struct.pack("<iI", pyr.frame, len(pyr.levels)))
            for lv in pyr.levels:
                h, w, c = lv.shape
                fh.write(struct.pack("<IIII", lv.stride, h, w, c))
                fh.write(np.ascontiguousarray(lv.grid, dtype=np.float64).tobytes())


def load_pyramids(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(PYR_MAGIC))
        if magic != PYR_MAGIC:
            raise IOError(f"{path}: not a pyramid blob (bad magic)")
        (count,) = struct.unpack("<I", fh.read(4))
        pyramids = []
        for _ in range(count):
            frame, n_levels = struct.unpack("<iI", fh.read(8))
            levels = []
            for _ in range(n_levels):
                stride, h, w, c = struct.unpack("<IIII", fh.read(16))
                raw = fh.read(8 * h * w * c)
                grid = np.frombuffer(raw, dtype="<f8").reshape(h, w, c).copy()
                levels.append(PyramidLevel(stride, grid))
            pyramids.append(FeaturePyramid(levels, frame=frame))
        return pyramids
