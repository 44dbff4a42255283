"""Deterministic synthetic swarm scenes.

A scene couples three views of the same world so detector, fusion, and
tracker all see a consistent story:

* ground truth: formation-coupled UAV trajectories with persistent ids,
  per-UAV appearance vectors carrying an identity signature and a unit
  heading (posture) vector;
* feature pyramids: each visible UAV splats its appearance signature as a
  Gaussian bump at its grid position over seeded background noise;
* corrupted detections: per-frame misses, box jitter, and false positives;
  a missed UAV is also omitted from the rendered features for that frame
  and every false positive adds a clutter bump, so detection failures and
  visual evidence agree.

Randomness is split into independent streams (motion / corruption /
render) spawned from the scene seed, so disabling rendering never changes
trajectories or detections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .detection import Detection
from .fusion import FeaturePyramid, PyramidLevel, save_pyramids
from .motio import write_mot_file

TRAJECTORIES = ("line", "circle", "s-curve", "formation-transition")


@dataclass
class FormationSpec:
    """Formation offsets plus an analytic center trajectory."""

    offsets: np.ndarray  # [N, 2] per-UAV offsets from the formation center
    trajectory: str = "line"
    speed: float = 2.0  # pixels/frame along the path
    center: tuple = (64.0, 64.0)
    radius: float = 40.0  # circle only
    heading: float = 0.0  # line / s-curve direction, radians
    curve_amplitude: float = 12.0  # s-curve lateral swing, pixels
    curve_period: float = 40.0  # s-curve period, frames
    offsets_end: np.ndarray | None = None  # formation-transition target
    transition: tuple = (10, 40)  # (start, end) frames of the interpolation
    motion_noise: float = 0.0  # per-frame positional jitter, pixels

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 2)
        if self.offsets.shape[0] < 1:
            raise ValueError("formation needs at least one UAV")
        if len(np.unique(self.offsets, axis=0)) != self.offsets.shape[0]:
            raise ValueError("formation offsets must be distinct")
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.trajectory == "formation-transition":
            if self.offsets_end is None:
                raise ValueError("formation-transition requires offsets_end")
            self.offsets_end = np.asarray(self.offsets_end, dtype=np.float64).reshape(
                -1, 2
            )
            if self.offsets_end.shape != self.offsets.shape:
                raise ValueError("offsets_end must match offsets shape")

    @property
    def count(self):
        return self.offsets.shape[0]


@dataclass
class SceneSpec:
    formation: FormationSpec
    frames: int = 100
    image_size: int = 128
    box_size_range: tuple = (18.0, 26.0)
    embed_dim: int = 8  # appearance dim; last two channels hold the heading
    identity_gain: float = 1.0
    heading_gain: float = 1.0
    appearance_noise: float = 0.0
    grid_strides: tuple = (8, 16, 32)
    grid_channels: int = 8
    render_sigma: float = 1.0  # cells
    background_noise: float = 0.02
    clutter_gain: float = 0.8
    p_miss: float = 0.0
    p_false: float = 0.0
    box_jitter: float = 0.0
    render: bool = True

    def __post_init__(self):
        if self.frames < 1 or self.image_size < 8:
            raise ValueError("scene needs frames >= 1 and image_size >= 8")
        if self.embed_dim < 3:
            raise ValueError("embed_dim must be >= 3 (identity + 2 heading channels)")
        if not (0.0 <= self.p_miss <= 1.0):
            raise ValueError("p_miss must lie in [0, 1]")

    def grid_shapes(self):
        return [
            (self.image_size // s, self.image_size // s, self.grid_channels)
            for s in self.grid_strides
        ]


@dataclass
class GtObject:
    id: int
    box: np.ndarray  # (cx, cy, w, h)
    appearance: np.ndarray
    heading: np.ndarray  # unit vector


@dataclass
class Scene:
    spec: SceneSpec
    seed: int
    gt: list  # per frame: list[GtObject]
    detections: list  # per frame: list[Detection]
    missed: list  # per frame: list of dropped ids
    pyramids: list | None  # per frame FeaturePyramid when rendered
    centers: np.ndarray  # [F, 2] analytic formation centers
    angles: np.ndarray  # [F] formation rotation relative to frame 0
    frame_offsets: np.ndarray  # [F, N, 2] offsets after transition blending

    @property
    def frames(self):
        return self.spec.frames


def _center_and_heading(spec: FormationSpec, t: float):
    cx, cy = spec.center
    if spec.trajectory == "circle":
        omega = spec.speed / spec.radius
        pos = np.array(
            [cx + spec.radius * np.cos(omega * t), cy + spec.radius * np.sin(omega * t)]
        )
        heading = omega * t + 0.5 * np.pi
        return pos, heading
    direction = np.array([np.cos(spec.heading), np.sin(spec.heading)])
    perp = np.array([-direction[1], direction[0]])
    if spec.trajectory == "s-curve":
        phase = 2.0 * np.pi * t / spec.curve_period
        pos = (
            np.array([cx, cy])
            + spec.speed * t * direction
            + spec.curve_amplitude * np.sin(phase) * perp
        )
        velocity = spec.speed * direction + (
            spec.curve_amplitude * 2.0 * np.pi / spec.curve_period
        ) * np.cos(phase) * perp
        return pos, float(np.arctan2(velocity[1], velocity[0]))
    # line and formation-transition share a straight center path
    pos = np.array([cx, cy]) + spec.speed * t * direction
    return pos, spec.heading


def _offsets_at(spec: FormationSpec, t: float):
    if spec.trajectory != "formation-transition":
        return spec.offsets
    t0, t1 = spec.transition
    if t <= t0:
        return spec.offsets
    if t >= t1:
        return spec.offsets_end
    alpha = (t - t0) / (t1 - t0)
    return (1.0 - alpha) * spec.offsets + alpha * spec.offsets_end


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def corrupt_detections(objects, spec: SceneSpec, rng):
    """One frame of detection corruption.

    Each ground-truth object is kept with probability ``1 - p_miss``; kept
    boxes get N(0, box_jitter) noise and a score ~ clamp(N(0.9, 0.05)).
    False positives arrive Poisson-distributed with mean ``p_false`` per
    frame at uniform positions, scored ~ clamp(N(0.3, 0.1)).  Returns
    (detections, missed_ids, false_events).
    """
    detections = []
    missed = []
    for obj in objects:
        if rng.random() < spec.p_miss:
            missed.append(obj.id)
            continue
        box = obj.box.copy()
        if spec.box_jitter > 0:
            box = box + rng.normal(0.0, spec.box_jitter, size=4)
            box[2:] = np.maximum(box[2:], 1.0)
        score = float(np.clip(rng.normal(0.9, 0.05), 0.0, 1.0))
        detections.append(Detection(box, score))
    false_events = []
    n_false = rng.poisson(spec.p_false)
    lo, hi = spec.box_size_range
    for _ in range(n_false):
        pos = rng.uniform(0.1 * spec.image_size, 0.9 * spec.image_size, size=2)
        size = rng.uniform(lo, hi, size=2)
        score = float(np.clip(rng.normal(0.3, 0.1), 0.0, 1.0))
        box = np.array([pos[0], pos[1], size[0], size[1]])
        detections.append(Detection(box, score))
        false_events.append(box)
    return detections, missed, false_events


def render_feature_frame(objects, false_events, spec: SceneSpec, rng, frame=0):
    """Render one frame's pyramid from visible objects plus clutter bumps."""
    levels = []
    signatures = {}
    for stride, (h, w, c) in zip(spec.grid_strides, spec.grid_shapes()):
        grid = (
            rng.normal(0.0, spec.background_noise, size=(h, w, c))
            if spec.background_noise > 0
            else np.zeros((h, w, c))
        )
        for obj in objects:
            sig = _signature(obj.appearance, c, signatures, spec)
            _splat_bump(grid, obj.box[:2] / stride, sig, spec.render_sigma)
        for box in false_events:
            sig = rng.normal(0.0, spec.clutter_gain, size=c)
            _splat_bump(grid, box[:2] / stride, sig, spec.render_sigma)
        levels.append(PyramidLevel(stride, grid))
    return FeaturePyramid(levels, frame=frame)


def _signature(appearance, channels, cache, spec):
    key = appearance.tobytes()
    if key in cache:
        return cache[key]
    if channels == appearance.shape[0]:
        sig = appearance
    elif channels > appearance.shape[0]:
        sig = np.zeros(channels)
        sig[: appearance.shape[0]] = appearance
    else:
        sig = appearance[:channels]
    cache[key] = sig
    return sig


def _splat_bump(grid, center_cells, signature, sigma, trunc=4.0):
    height, width, _ = grid.shape
    cx, cy = center_cells
    radius = trunc * sigma
    x_lo = max(int(np.ceil(cx - 0.5 - radius)), 0)
    x_hi = min(int(np.floor(cx - 0.5 + radius)), width - 1)
    y_lo = max(int(np.ceil(cy - 0.5 - radius)), 0)
    y_hi = min(int(np.floor(cy - 0.5 + radius)), height - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return
    xs = np.arange(x_lo, x_hi + 1) + 0.5 - cx
    ys = np.arange(y_lo, y_hi + 1) + 0.5 - cy
    w = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) / (2.0 * sigma**2))
    grid[y_lo : y_hi + 1, x_lo : x_hi + 1] += w[:, :, None] * signature


def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    """Build the full scene: trajectories, appearances, detections, features."""
    streams = np.random.SeedSequence(seed).spawn(3)
    rng_motion = np.random.default_rng(streams[0])
    rng_corrupt = np.random.default_rng(streams[1])
    rng_render = np.random.default_rng(streams[2])

    form = spec.formation
    n = form.count
    frames = spec.frames
    ids = list(range(1, n + 1))
    sizes = rng_motion.uniform(*spec.box_size_range, size=(n, 2))

    centers = np.zeros((frames, 2))
    angles = np.zeros(frames)
    frame_offsets = np.zeros((frames, n, 2))
    positions = np.zeros((frames, n, 2))
    base_heading = None
    for t in range(frames):
        center, heading = _center_and_heading(form, float(t))
        if base_heading is None:
            base_heading = heading
        centers[t] = center
        angles[t] = heading - base_heading
        frame_offsets[t] = _offsets_at(form, float(t))
        positions[t] = center + frame_offsets[t] @ _rotation(angles[t]).T
    if form.motion_noise > 0:
        positions = positions + rng_motion.normal(
            0.0, form.motion_noise, size=positions.shape
        )

    # per-UAV headings from forward differences (backward at the last frame)
    headings = np.zeros((frames, n, 2))
    for t in range(frames):
        if t + 1 < frames:
            ref = positions[t + 1] - positions[t]
        elif t > 0:
            ref = positions[t] - positions[t - 1]
        else:
            ref = np.zeros((n, 2))
        for i in range(n):
            norm = np.linalg.norm(ref[i])
            headings[t, i] = ref[i] / norm if norm > 1e-12 else np.array([1.0, 0.0])

    hash_dim = spec.embed_dim - 2
    gt_frames = []
    for t in range(frames):
        objects = []
        for i, track_id in enumerate(ids):
            appearance = np.zeros(spec.embed_dim)
            appearance[(track_id - 1) % hash_dim] = spec.identity_gain
            appearance[hash_dim:] = spec.heading_gain * headings[t, i]
            if spec.appearance_noise > 0:
                appearance = appearance + rng_motion.normal(
                    0.0, spec.appearance_noise, size=spec.embed_dim
                )
            w, h = sizes[i]
            cx = float(np.clip(positions[t, i, 0], 0.5 * w, spec.image_size - 0.5 * w))
            cy = float(np.clip(positions[t, i, 1], 0.5 * h, spec.image_size - 0.5 * h))
            objects.append(
                GtObject(track_id, np.array([cx, cy, w, h]), appearance, headings[t, i])
            )
        gt_frames.append(objects)

    detections, missed, false_all = [], [], []
    for t in range(frames):
        dets, miss, false_events = corrupt_detections(gt_frames[t], spec, rng_corrupt)
        detections.append(dets)
        missed.append(miss)
        false_all.append(false_events)

    pyramids = None
    if spec.render:
        pyramids = []
        for t in range(frames):
            visible = [o for o in gt_frames[t] if o.id not in missed[t]]
            pyramids.append(
                render_feature_frame(visible, false_all[t], spec, rng_render, frame=t)
            )

    return Scene(
        spec=spec,
        seed=seed,
        gt=gt_frames,
        detections=detections,
        missed=missed,
        pyramids=pyramids,
        centers=centers,
        angles=angles,
        frame_offsets=frame_offsets,
    )


def oracle_detections(scene: Scene, frame: int):
    """Perfect detections straight from ground truth (unit appearance)."""
    dets = []
    for obj in scene.gt[frame]:
        emb = obj.appearance / np.linalg.norm(obj.appearance)
        dets.append(Detection(obj.box.copy(), 1.0, embedding=emb))
    return dets


# -- scene export -------------------------------------------------------------------


def export_mot(scene: Scene, outdir):
    """Write gt.txt / det.txt (MOTChallenge rows, 1-based frames), a JSON
    manifest, and the rendered pyramid blob when present."""
    import os

    os.makedirs(outdir, exist_ok=True)
    gt_rows = []
    for t, objects in enumerate(scene.gt):
        for obj in objects:
            gt_rows.append((t + 1, obj.id, obj.box, 1.0))
    gt_path = os.path.join(outdir, "gt.txt")
    write_mot_file(gt_path, gt_rows)

    det_rows = []
    for t, dets in enumerate(scene.detections):
        for det in dets:
            det_rows.append((t + 1, -1, det.box, det.score))
    det_path = os.path.join(outdir, "det.txt")
    write_mot_file(det_path, det_rows)

    manifest = {
        "frames": scene.frames,
        "image_size": scene.spec.image_size,
        "seed": scene.seed,
        "n_uavs": scene.spec.formation.count,
        "trajectory": scene.spec.formation.trajectory,
        "embed_dim": scene.spec.embed_dim,
        "grid_strides": list(scene.spec.grid_strides),
        "grid_channels": scene.spec.grid_channels,
        "p_miss": scene.spec.p_miss,
        "p_false": scene.spec.p_false,
        "rendered": scene.pyramids is not None,
    }
    manifest_path = os.path.join(outdir, "scene.json")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")

    paths = {"gt": gt_path, "det": det_path, "manifest": manifest_path}
    if scene.pyramids is not None:
        blob_path = os.path.join(outdir, "pyramids.blob")
        save_pyramids(blob_path, scene.pyramids)
        paths["pyramids"] = blob_path
    return paths
