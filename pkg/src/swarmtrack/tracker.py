"""Online sliding-window tracking.

High-confidence detections associate to tracklets through the elementwise
product of an appearance cosine matrix and an exponential motion-distance
matrix, solved by the Hungarian assignment; leftover low-confidence
detections can only re-attach to unmatched tracklets through an IoU gate
against the previous frame (and never spawn new tracklets).  Tracklet
positions are forecast by the swarm predictor once a tracklet has a full
T-frame history, and by constant velocity before that.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .detection import Detection
from .predictor import Prediction, SwarmPredictor, SwarmWindow

_STATES = ("tentative", "active", "lost")


@dataclass
class TrackerConfig:
    high_thresh: float = 0.6  # score >= threshold goes to the high set
    low_iou_gate: float = 0.3
    window: int = 16  # history ring length (T')
    max_age: int = 16  # frames a tracklet may go unmatched before removal
    motion_scale: float = 40.0  # pixels; gate radius is 3x this
    min_similarity: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.high_thresh < 1.0:
            raise ValueError("high_thresh must lie in (0, 1)")
        if self.window < 2:
            raise ValueError("window must be >= 2")


class Tracklet:
    """Identity with a bounded ring of (frame, box, embedding, score)."""

    def __init__(self, track_id, frame, detection: Detection, window):
        self.id = track_id
        self.frames = deque(maxlen=window)
        self.boxes = deque(maxlen=window)
        self.embeddings = deque(maxlen=window)
        self.scores = deque(maxlen=window)
        self.state = "tentative"
        self.missed = 0
        self._append(frame, detection.box, detection.embedding, detection.score)

    def _append(self, frame, box, embedding, score):
        if self.frames and frame <= self.frames[-1]:
            raise ValueError(f"tracklet {self.id}: frames must increase")
        self.frames.append(int(frame))
        self.boxes.append(np.asarray(box, dtype=np.float64))
        if embedding is None:
            embedding = self.embeddings[-1] if self.embeddings else None
        self.embeddings.append(
            None if embedding is None else np.asarray(embedding, dtype=np.float64)
        )
        self.scores.append(float(score))

    def update(self, frame, detection: Detection, keep_embedding=False):
        emb = None if keep_embedding else detection.embedding
        self._append(frame, detection.box, emb, detection.score)
        self.missed = 0
        self.state = "active" if len(self.frames) > 1 else "tentative"

    def mark_missed(self):
        self.missed += 1
        self.state = "lost"

    @property
    def last_box(self):
        return self.boxes[-1]

    @property
    def last_frame(self):
        return self.frames[-1]

    def mean_embedding(self):
        known = [e for e in self.embeddings if e is not None]
        if not known:
            return None
        return np.mean(known, axis=0)

    def has_full_history(self, frame, length):
        """True when the tracklet covers every frame in [frame-length, frame)."""
        if len(self.frames) < length:
            return False
        recent = list(self.frames)[-length:]
        return recent == list(range(frame - length, frame))

    def recent_window(self, length):
        positions = np.stack([b[:2] for b in list(self.boxes)[-length:]])
        embs = []
        last = None
        for e in list(self.embeddings)[-length:]:
            if e is not None:
                last = e
            embs.append(last)
        if any(e is None for e in embs):
            return None, None
        return positions, np.stack(embs)

    def constant_velocity_center(self, frame):
        if len(self.boxes) >= 2:
            vel = self.boxes[-1][:2] - self.boxes[-2][:2]
            step = frame - self.frames[-1]
        else:
            vel = np.zeros(2)
            step = 0
        return self.boxes[-1][:2] + step * vel


# -- association pieces -------------------------------------------------------------


def split_by_confidence(detections, cfg: TrackerConfig):
    """Partition by score; a score equal to the threshold counts as high."""
    high = [d for d in detections if d.score >= cfg.high_thresh]
    low = [d for d in detections if d.score < cfg.high_thresh]
    return high, low


def appearance_similarity(tracklets, detections):
    """Clamped cosine similarity between tracklet mean and detection
    embeddings, in [0, 1]."""
    rows = len(tracklets)
    cols = len(detections)
    out = np.zeros((rows, cols))
    for m, trk in enumerate(tracklets):
        mean = trk.mean_embedding()
        if mean is None:
            continue
        norm_m = np.linalg.norm(mean)
        if norm_m == 0:
            continue
        for i, det in enumerate(detections):
            if det.embedding is None:
                continue
            norm_d = np.linalg.norm(det.embedding)
            if norm_d == 0:
                continue
            cos = float(mean @ det.embedding / (norm_m * norm_d))
            out[m, i] = max(0.0, cos)
    return out


def motion_similarity(tracklets, detections, predicted_centers, cfg: TrackerConfig):
    """``exp(-distance / scale)`` to each tracklet's predicted center,
    zeroed beyond three scales."""
    rows = len(tracklets)
    cols = len(detections)
    out = np.zeros((rows, cols))
    if cols == 0:
        return out
    det_centers = np.stack([d.box[:2] for d in detections])
    gate = 3.0 * cfg.motion_scale
    for m in range(rows):
        dist = np.linalg.norm(det_centers - predicted_centers[m], axis=1)
        sim = np.exp(-dist / cfg.motion_scale)
        sim[dist > gate] = 0.0
        out[m] = sim
    return out


def fuse_costs(appearance, motion):
    appearance = np.asarray(appearance, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    if appearance.shape != motion.shape:
        raise ValueError(
            f"similarity shapes differ: {appearance.shape} vs {motion.shape}"
        )
    return appearance * motion


def hungarian_assign(similarity, min_similarity=0.0):
    """Max-similarity one-to-one assignment with a floor on accepted pairs.

    Returns (matches, unmatched_rows, unmatched_cols); matches are (row, col)
    pairs sorted by row.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    rows, cols = sim.shape if sim.ndim == 2 else (0, 0)
    if rows == 0 or cols == 0:
        return [], list(range(rows)), list(range(cols))
    r_idx, c_idx = kernels.lsap_minimize(-sim)
    matches = [
        (int(r), int(c)) for r, c in zip(r_idx, c_idx) if sim[r, c] >= min_similarity
    ]
    used_r = {r for r, _ in matches}
    used_c = {c for _, c in matches}
    unmatched_rows = [r for r in range(rows) if r not in used_r]
    unmatched_cols = [c for c in range(cols) if c not in used_c]
    return matches, unmatched_rows, unmatched_cols


# -- the tracker ----------------------------------------------------------------------


@dataclass
class FrameOutput:
    frame: int
    rows: list = field(default_factory=list)  # (frame, id, box, score)
    events: dict = field(default_factory=dict)


class Tracker:
    """Consumes per-frame detections (with embeddings) and maintains tracklets."""

    def __init__(self, cfg: TrackerConfig, predictor: SwarmPredictor | None = None):
        self.cfg = cfg
        self.predictor = predictor
        self.tracklets: list[Tracklet] = []
        self._next_id = 1
        self._last_frame = None

    def predicted_centers(self, frame):
        """Per-tracklet center forecast for ``frame``: the swarm predictor for
        full-history tracklets (jointly, as one swarm window), constant
        velocity otherwise."""
        centers = np.zeros((len(self.tracklets), 2))
        eligible = []
        if self.predictor is not None:
            length = self.predictor.cfg.history_len
            eligible = [
                (k, trk)
                for k, trk in enumerate(self.tracklets)
                if trk.has_full_history(frame, length)
            ]
        for k, trk in enumerate(self.tracklets):
            centers[k] = trk.constant_velocity_center(frame)
        if eligible:
            length = self.predictor.cfg.history_len
            rows = []
            ids = []
            embs = []
            for k, trk in eligible:
                pos, emb = trk.recent_window(length)
                if pos is None:
                    continue
                rows.append((k, pos))
                ids.append(trk.id)
                embs.append(emb)
            if rows:
                window = SwarmWindow.from_positions(
                    np.stack([p for _, p in rows]), np.stack(embs), ids
                )
                prediction = self.predictor(window)
                for (k, _), center in zip(rows, prediction.positions[:, 0]):
                    centers[k] = center
        return centers

    def step(self, frame, detections) -> FrameOutput:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"duplicate or out-of-order frame index {frame}")
        self._last_frame = frame

        high, low = split_by_confidence(detections, self.cfg)
        predicted = self.predicted_centers(frame)
        appearance = appearance_similarity(self.tracklets, high)
        motion = motion_similarity(self.tracklets, high, predicted, self.cfg)
        fused = fuse_costs(appearance, motion)
        matches, unmatched_trk, unmatched_det = hungarian_assign(
            fused, self.cfg.min_similarity
        )

        out = FrameOutput(frame)
        match_events = []
        for trk_idx, det_idx in matches:
            trk = self.tracklets[trk_idx]
            trk.update(frame, high[det_idx])
            match_events.append([trk.id, det_idx])

        births = []
        for det_idx in unmatched_det:
            trk = Tracklet(self._next_id, frame, high[det_idx], self.cfg.window)
            self._next_id += 1
            self.tracklets.append(trk)
            births.append(trk.id)

        # low-confidence recovery against tracklets still unmatched this frame
        remaining = [self.tracklets[k] for k in unmatched_trk]
        recovered = set()
        if remaining and low:
            trk_boxes = np.stack([t.last_box for t in remaining])
            det_boxes = np.stack([d.box for d in low])
            overlap = kernels.iou_matrix(trk_boxes, det_boxes)
            iou_matches, _, _ = hungarian_assign(overlap, self.cfg.low_iou_gate)
            for r, c in iou_matches:
                trk = remaining[r]
                trk.update(frame, low[c], keep_embedding=True)
                match_events.append([trk.id, len(high) + c])
                recovered.add(id(trk))

        deaths = []
        survivors = []
        for k, trk in enumerate(self.tracklets):
            updated = trk.last_frame == frame
            if not updated:
                trk.mark_missed()
            if trk.missed > self.cfg.max_age:
                deaths.append(trk.id)
            else:
                survivors.append(trk)
        self.tracklets = survivors

        for trk in self.tracklets:
            if trk.last_frame == frame:
                out.rows.append((frame, trk.id, trk.last_box.copy(), trk.scores[-1]))
        out.events = {
            "frame": int(frame),
            "matches": sorted(match_events),
            "births": births,
            "deaths": sorted(deaths),
        }
        return out


def write_event_log(path, outputs):
    """JSON-lines event log (frame, matches, births, deaths)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for out in outputs:
            fh.write(json.dumps(out.events, sort_keys=True) + "\n")


# -- full pipeline (fusion + detection + tracking) -------------------------------------


class TrackingPipeline:
    """Per-frame orchestration: optional trajectory-guided fusion, head
    decode (or externally supplied detections), embedding, tracker step.

    History features for the fusion are pooled from the last T raw pyramids
    at the tracked boxes, matching how the fusion is trained.
    """

    def __init__(
        self,
        tracker_cfg,
        predictor,
        embedder,
        head=None,
        fuser=None,
        use_fusion=False,
        fused_levels=1,
    ):
        self.tracker = Tracker(tracker_cfg, predictor)
        self.predictor = predictor
        self.embedder = embedder
        self.head = head
        self.fuser = fuser
        self.use_fusion = use_fusion and fuser is not None
        # stage-two training reaches only the finest level (embeddings pool
        # there), so deeper fused levels would run untrained; by default only
        # level 0 replaces its raw grid at inference
        self.fused_levels = fused_levels
        history = predictor.cfg.history_len if predictor is not None else 8
        self._pyramids = deque(maxlen=history)
        self._boxes: dict[int, deque] = {}

    def _fusion_inputs(self, frame):
        """Window, predicted centers, and pooled history for eligible
        tracklets, or None when no tracklet has a full history yet."""
        from .fusion import HistoryFeatures, pool_history

        length = self.predictor.cfg.history_len
        if len(self._pyramids) < length:
            return None
        eligible = [
            trk
            for trk in self.tracker.tracklets
            if trk.has_full_history(frame, length)
        ]
        if not eligible:
            return None
        positions, embeddings, ids, boxes = [], [], [], []
        for trk in eligible:
            pos, emb = trk.recent_window(length)
            if pos is None:
                continue
            positions.append(pos)
            embeddings.append(emb)
            ids.append(trk.id)
            boxes.append(np.stack(list(trk.boxes)[-length:]))
        if not ids:
            return None
        window = SwarmWindow.from_positions(
            np.stack(positions), np.stack(embeddings), ids
        )
        prediction = self.predictor(window)
        history = pool_history(list(self._pyramids), np.stack(boxes), level=0)
        return prediction.positions[:, 0], history

    def process_frame(self, frame, pyramid, detections=None):
        """Returns (FrameOutput, grids used for detection/embedding)."""
        grids = [lv.grid for lv in pyramid.levels]
        if self.use_fusion:
            inputs = self._fusion_inputs(frame)
            if inputs is not None:
                centers, history = inputs
                from .tensor import Tensor

                fused = self.fuser.fuse(pyramid, Tensor(centers), history)
                limit = len(grids) if self.fused_levels is None else self.fused_levels
                grids = [
                    f.data if i < limit else g
                    for i, (f, g) in enumerate(zip(fused, grids))
                ]
        if detections is None:
            if self.head is None:
                raise ValueError("pipeline has no detection head and no detections")
            detections = self.head.decode(grids, embedder=self.embedder)
        else:
            for det in detections:
                if det.embedding is None and self.embedder is not None:
                    det.embedding = self.embedder.embed(
                        grids[0], det.box, pyramid.levels[0].stride
                    ).data.copy()
        output = self.tracker.step(frame, detections)
        self._pyramids.append(pyramid)
        return output, grids
