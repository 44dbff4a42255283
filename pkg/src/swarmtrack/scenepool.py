"""Randomized scene corpora for training and evaluation.

``curved_scene_pool`` draws circle / s-curve formations with substantial
curvature (the regime where straight-line extrapolation degrades), used to
train and evaluate the trajectory predictor.  ``tracking_scene_pool``
renders feature pyramids for detector / fusion training and full-pipeline
evaluation.
"""

from __future__ import annotations

import numpy as np

from .simulator import FormationSpec, SceneSpec, generate_scene


def ring_offsets(rng, count, lo=8.0, hi=22.0, min_separation=0.0):
    """Formation offsets on a jittered ring; optionally resampled until all
    pairwise separations exceed ``min_separation`` (keeps NMS off teammates)."""
    for _ in range(200):
        angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False) + rng.uniform(
            0.0, 2.0 * np.pi
        )
        radii = rng.uniform(lo, hi, size=count)
        offsets = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        if min_separation <= 0.0:
            return offsets
        diff = offsets[:, None, :] - offsets[None, :, :]
        dist = np.sqrt((diff**2).sum(-1)) + np.eye(count) * 1e9
        if dist.min() >= min_separation:
            return offsets
    raise ValueError(
        f"could not place {count} offsets with separation {min_separation}"
    )


def curved_formation(rng, count=None, image=256.0):
    """A random circle or s-curve formation centered in the image."""
    n = int(rng.integers(3, 8)) if count is None else count
    offsets = ring_offsets(rng, n)
    mid = image / 2.0
    if rng.random() < 0.5:
        return FormationSpec(
            offsets=offsets,
            trajectory="circle",
            speed=rng.uniform(2.0, 3.5),
            center=(mid, mid),
            radius=rng.uniform(22.0, 45.0),
            heading=rng.uniform(0.0, 2.0 * np.pi),
        )
    theta = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta)])
    start = mid - direction * 1.8 * 15.0
    return FormationSpec(
        offsets=offsets,
        trajectory="s-curve",
        speed=rng.uniform(1.4, 2.4),
        center=tuple(start),
        heading=theta,
        curve_amplitude=rng.uniform(14.0, 26.0),
        curve_period=rng.uniform(24.0, 44.0),
    )


def curved_scene_pool(count, seed, frames=30, image_size=256, render=False):
    """Unrendered curved-motion scenes for predictor training/evaluation."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(count):
        spec = SceneSpec(
            formation=curved_formation(rng, image=image_size),
            frames=frames,
            image_size=image_size,
            render=render,
        )
        scenes.append(generate_scene(spec, seed=int(rng.integers(2**31 - 1))))
    return scenes


def tracking_scene_pool(count, cfg, seed, frames=None, p_miss=None):
    """Rendered scenes matching the run configuration's image/grid geometry.

    Formation members keep at least ``1.1 * box_max`` separation so boxes of
    distinct UAVs never overlap enough to NMS-suppress each other."""
    rng = np.random.default_rng(seed)
    scenes = []
    min_sep = 1.1 * cfg.box_max

    def geometry(n):
        # ring radius large enough for the separation, then the path radius
        # fits into what is left of the frame so boxes never clamp
        ring_lo = min_sep / (2.0 * np.sin(np.pi / n)) + 1.0
        ring_hi = 1.3 * ring_lo
        budget = 0.5 * cfg.image_size - 0.55 * cfg.box_max - ring_hi - 2.0
        return ring_lo, ring_hi, budget

    feasible = [n for n in range(3, 8) if geometry(n)[2] >= 6.0]
    if not feasible:
        raise ValueError(
            f"image {cfg.image_size} too small for {cfg.box_max}px boxes"
        )
    for _ in range(count):
        n = int(rng.choice(feasible))
        ring_lo, ring_hi, budget = geometry(n)
        offsets = ring_offsets(rng, n, lo=ring_lo, hi=ring_hi, min_separation=min_sep)
        path_radius = rng.uniform(min(10.0, budget), budget)
        mid = cfg.image_size / 2.0
        n_frames = frames if frames is not None else cfg.scene_frames
        kind = "circle" if rng.random() < 0.6 else "s-curve"
        heading = rng.uniform(0.0, 2.0 * np.pi)
        if kind == "circle":
            center = (mid, mid)
            speed = rng.uniform(1.0, 2.0)
            amplitude = 8.0
        else:
            # center the path on the image; cap travel at 80% of the budget
            # along the heading and amplitude at 55% across it (quadrature
            # stays within the budget)
            speed = min(rng.uniform(1.0, 2.0), 1.6 * budget / n_frames)
            direction = np.array([np.cos(heading), np.sin(heading)])
            start = np.array([mid, mid]) - direction * speed * n_frames / 2.0
            center = (float(start[0]), float(start[1]))
            amplitude = min(rng.uniform(8.0, 12.0), 0.55 * budget)
        formation = FormationSpec(
            offsets=offsets,
            trajectory=kind,
            speed=speed,
            center=center,
            radius=path_radius,
            heading=heading,
            curve_amplitude=amplitude,
            curve_period=rng.uniform(30.0, 50.0),
        )
        spec = SceneSpec(
            formation=formation,
            frames=frames if frames is not None else cfg.scene_frames,
            image_size=cfg.image_size,
            box_size_range=(cfg.box_min, cfg.box_max),
            embed_dim=cfg.embed_dim,
            grid_strides=(8, 16, 32),
            grid_channels=cfg.grid_channels,
            render_sigma=cfg.render_sigma,
            background_noise=cfg.background_noise,
            p_miss=cfg.p_miss if p_miss is None else p_miss,
            p_false=cfg.p_false,
            box_jitter=cfg.box_jitter,
            render=True,
        )
        scenes.append(generate_scene(spec, seed=int(rng.integers(2**31 - 1))))
    return scenes
