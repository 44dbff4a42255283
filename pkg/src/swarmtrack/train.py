"""Staged training: detector pretraining, then motion + association.

Stage one fits the detection head on raw rendered pyramids under the
weighted detection loss.  Stage two freezes the detector and jointly trains
the swarm predictor, the fusion stack, and the appearance embedder under
the combined motion + association loss; gradients reach the predictor both
directly (motion) and through the predicted centers feeding the fusion
splat (association).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detection import association_loss, detection_losses
from .fusion import pool_history
from .nn import SGD
from .predictor import SwarmWindow, motion_loss
from .tensor import NonFiniteError, Tensor, stack


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass
class SgdSettings:
    """Initial learning rate with optional cosine decay to ``lr * final_scale``.

    Decay matters here: the mean-Euclidean motion loss has unit-magnitude
    gradients arbitrarily close to the optimum, so a constant rate orbits
    instead of settling.
    """

    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0005
    cosine_decay: bool = True
    final_scale: float = 0.01
    warmup_steps: int = 100
    clip_norm: float = 5.0  # 0 disables global gradient-norm clipping

    def lr_at(self, step, total_steps):
        if step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        if not self.cosine_decay or total_steps <= 1:
            return self.lr
        span = max(total_steps - self.warmup_steps, 1)
        progress = min((step - self.warmup_steps) / span, 1.0)
        floor = self.lr * self.final_scale
        return floor + 0.5 * (self.lr - floor) * (1.0 + np.cos(np.pi * progress))


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)  # (step, name, value)

    def log(self, step, name, value):
        self.rows.append((step, name, float(value)))

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,loss,value\n")
            for step, name, value in self.rows:
                fh.write(f"{step},{name},{value:.10g}\n")


# -- window extraction ---------------------------------------------------------------


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    if not max_norm:
        return
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad**2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale


def scene_windows(scene, history, horizon, embeddings="appearance"):
    """All (window, future_positions) pairs a scene supports.

    Window embeddings default to the ground-truth appearance vectors; pass
    ``embeddings="unit"`` to unit-normalize them (matching what the tracker
    stores at inference time).
    """
    frames = scene.frames
    ids = [obj.id for obj in scene.gt[0]]
    centers = np.stack(
        [np.stack([obj.box[:2] for obj in objs]) for objs in scene.gt]
    ).transpose(1, 0, 2)
    apps = np.stack(
        [np.stack([obj.appearance for obj in objs]) for objs in scene.gt]
    ).transpose(1, 0, 2)
    if embeddings == "unit":
        apps = apps / np.linalg.norm(apps, axis=-1, keepdims=True)
    samples = []
    for t in range(history, frames - horizon + 1):
        window = SwarmWindow.from_positions(
            centers[:, t - history : t], apps[:, t - history : t], ids
        )
        samples.append((window, centers[:, t : t + horizon].copy(), t))
    return samples


# -- stage: swarm predictor ------------------------------------------------------------


def train_predictor(
    model,
    scenes,
    settings: SgdSettings,
    epochs=4,
    batch=8,
    seed=0,
    trace: LossTrace | None = None,
):
    """Fit the predictor on every window of the given scenes."""
    history = model.cfg.history_len
    horizon = model.cfg.horizon
    samples = []
    for scene in scenes:
        samples.extend(
            (w, target) for w, target, _ in scene_windows(scene, history, horizon)
        )
    if not samples:
        raise ValueError("no training windows: scenes too short for the window")
    rng = np.random.default_rng(seed)
    optimizer = SGD(
        model.parameters(),
        lr=settings.lr,
        momentum=settings.momentum,
        weight_decay=settings.weight_decay,
    )
    steps_per_epoch = int(np.ceil(len(samples) / batch))
    total_steps = epochs * steps_per_epoch
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(order), batch):
            chunk = order[lo : lo + batch]
            optimizer.zero_grad()
            optimizer.lr = settings.lr_at(step, total_steps)
            total = Tensor(0.0)
            for k in chunk:
                window, target = samples[k]
                total = total + motion_loss(model.predict_tensor(window), target)
            total = total * (1.0 / len(chunk))
            _finite_or_raise(total, step, "motion")
            total.backward()
            clip_gradients(optimizer.params, settings.clip_norm)
            optimizer.step()
            if trace is not None:
                trace.log(step, "motion", total.item())
            step += 1
    return step


def predictor_ade(model, scenes):
    """Average displacement error of the predictor over full-window samples."""
    errors = []
    for scene in scenes:
        for window, target, _ in scene_windows(
            scene, model.cfg.history_len, model.cfg.horizon
        ):
            pred = model(window).positions
            errors.append(np.sqrt(((pred - target) ** 2).sum(-1)).mean())
    return float(np.mean(errors))


def constant_velocity_ade(scenes, history, horizon):
    from .predictor import constant_velocity_predict

    errors = []
    for scene in scenes:
        for window, target, _ in scene_windows(scene, history, horizon):
            pred = constant_velocity_predict(window, horizon).positions
            errors.append(np.sqrt(((pred - target) ** 2).sum(-1)).mean())
    return float(np.mean(errors))


# -- stage: detector ---------------------------------------------------------------


def participating_parameters(module, loss_fn):
    """Parameters that actually receive gradients from ``loss_fn``.

    With one class and finest-level-only assignment, the coarse-level box
    and class predictors never enter the loss; the optimizer must not own
    them (a missing gradient is an error by contract).
    """
    module.zero_grad()
    loss_fn().backward()
    params = {k: p for k, p in module.parameters().items() if p.grad is not None}
    module.zero_grad()
    return params


def train_detector(
    head,
    scenes,
    settings: SgdSettings,
    steps=600,
    seed=0,
    trace: LossTrace | None = None,
):
    """Pretrain the detection head on raw pyramids (stage one)."""
    rng = np.random.default_rng(seed)
    rendered = [s for s in scenes if s.pyramids is not None]
    if not rendered:
        raise ValueError("detector training needs rendered scenes")

    def sample():
        scene = rendered[rng.integers(len(rendered))]
        frame = int(rng.integers(scene.frames))
        grids = [lv.grid for lv in scene.pyramids[frame].levels]
        visible = [o for o in scene.gt[frame] if o.id not in scene.missed[frame]]
        boxes = np.stack([o.box for o in visible]) if visible else np.zeros((0, 4))
        return grids, boxes

    probe_grids, probe_boxes = sample()
    params = participating_parameters(
        head, lambda: detection_losses(head, probe_grids, probe_boxes).total
    )
    optimizer = SGD(
        params,
        lr=settings.lr,
        momentum=settings.momentum,
        weight_decay=settings.weight_decay,
    )
    for step in range(steps):
        grids, boxes = sample()
        optimizer.zero_grad()
        optimizer.lr = settings.lr_at(step, steps)
        losses = detection_losses(head, grids, boxes)
        _finite_or_raise(losses.total, step, "detector")
        losses.total.backward()
        clip_gradients(optimizer.params, settings.clip_norm)
        optimizer.step()
        if trace is not None:
            trace.log(step, "det_total", losses.total.item())
    return steps


# -- stage: motion + association -------------------------------------------------------


def _window_with_embedder(scene, embedder, t, history):
    """Swarm window whose embeddings come from the embedder on raw pyramids,
    mirroring what tracklets store at inference time."""
    ids = [obj.id for obj in scene.gt[0]]
    n = len(ids)
    positions = np.zeros((n, history, 2))
    embeddings = np.zeros((n, history, embedder.proj.out_dim))
    boxes = np.zeros((n, history, 4))
    for j, frame in enumerate(range(t - history, t)):
        lv = scene.pyramids[frame].levels[0]
        for i, obj in enumerate(scene.gt[frame]):
            positions[i, j] = obj.box[:2]
            boxes[i, j] = obj.box
            embeddings[i, j] = embedder.embed(lv.grid, obj.box, lv.stride).data
    return SwarmWindow.from_positions(positions, embeddings, ids), boxes


def association_sample(scene, predictor, fuser, embedder, t):
    """Stage-two losses for one (scene, frame) sample.

    Returns (motion, association) loss Tensors; gradients flow into the
    predictor (directly and through the splat centers), the fuser, and the
    embedder (through both the fused current-frame embeddings and the
    raw-history tracklet means).
    """
    history = predictor.cfg.history_len
    horizon = predictor.cfg.horizon
    window, hist_boxes = _window_with_embedder(scene, embedder, t, history)
    n = window.count
    targets = np.stack(
        [
            np.stack([obj.box[:2] for obj in scene.gt[frame]])
            for frame in range(t, t + horizon)
        ]
    ).transpose(1, 0, 2)

    predicted = predictor.predict_tensor(window)
    l_motion = motion_loss(predicted, targets)

    history_feats = pool_history(
        scene.pyramids[t - history : t], hist_boxes, level=0
    )
    centers = predicted[:, 0, :]
    fused = fuser.fuse(scene.pyramids[t], centers, history_feats)

    finest = fused[0]
    stride = scene.pyramids[t].levels[0].stride
    current = stack(
        [embedder.embed(finest, obj.box, stride) for obj in scene.gt[t]], axis=0
    )
    mean_rows = []
    for i in range(n):
        per_frame = []
        for j, frame in enumerate(range(t - history, t)):
            lv = scene.pyramids[frame].levels[0]
            per_frame.append(embedder.embed(lv.grid, scene.gt[frame][i].box, lv.stride))
        mean_rows.append(stack(per_frame, axis=0).mean(axis=0))
    means = stack(mean_rows, axis=0)
    l_asso = association_loss([(current, np.arange(n))], means)
    return l_motion, l_asso


def train_association(
    predictor,
    fuser,
    embedder,
    scenes,
    settings: SgdSettings,
    steps=300,
    seed=0,
    trace: LossTrace | None = None,
):
    """Stage two: joint motion + association training (detector frozen)."""
    rng = np.random.default_rng(seed)
    rendered = [s for s in scenes if s.pyramids is not None]
    if not rendered:
        raise ValueError("association training needs rendered scenes")
    history = predictor.cfg.history_len
    horizon = predictor.cfg.horizon

    all_params = {}
    all_params.update({f"predictor.{k}": v for k, v in predictor.parameters().items()})
    all_params.update({f"fuser.{k}": v for k, v in fuser.parameters().items()})
    all_params.update({f"embedder.{k}": v for k, v in embedder.parameters().items()})
    # probe once: the association loss reads only the finest fused level, so
    # coarse-level fusion parameters see no gradient and must stay out of
    # the optimizer
    for p in all_params.values():
        p.zero_grad()
    probe_scene = rendered[0]
    lm, la = association_sample(probe_scene, predictor, fuser, embedder, history)
    (lm + la).backward()
    params = {k: p for k, p in all_params.items() if p.grad is not None}
    for p in all_params.values():
        p.zero_grad()
    optimizer = SGD(
        params,
        lr=settings.lr,
        momentum=settings.momentum,
        weight_decay=settings.weight_decay,
    )
    for step in range(steps):
        scene = rendered[rng.integers(len(rendered))]
        hi = scene.frames - horizon + 1
        if hi <= history:
            raise ValueError("scene too short for history + horizon")
        t = int(rng.integers(history, hi))
        optimizer.zero_grad()
        optimizer.lr = settings.lr_at(step, steps)
        l_motion, l_asso = association_sample(scene, predictor, fuser, embedder, t)
        total = l_motion + l_asso
        _finite_or_raise(total, step, "association")
        total.backward()
        clip_gradients(optimizer.params, settings.clip_norm)
        optimizer.step()
        if trace is not None:
            trace.log(step, "motion", l_motion.item())
            trace.log(step, "asso", l_asso.item())
    return steps


def training_step(stage, optimizer, loss_fn, step=0):
    """One optimization step with divergence handling.

    ``stage`` is 'detector-pretrain' or 'assoc-train'; ``loss_fn`` builds the
    stage loss over whatever parameters the optimizer owns (the stage-two
    optimizer owns no detector parameters, which keeps the detector frozen).
    """
    if stage not in ("detector-pretrain", "assoc-train"):
        raise ValueError(f"unknown training stage {stage!r}")
    optimizer.zero_grad()
    try:
        loss = loss_fn()
    except NonFiniteError as exc:
        raise TrainingDiverged(f"stage {stage}, step {step}: {exc}") from exc
    _finite_or_raise(loss, step, stage)
    loss.backward()
    optimizer.step()
    return loss.item()


def _finite_or_raise(loss, step, stage):
    if not np.isfinite(loss.data).all():
        raise TrainingDiverged(
            f"non-finite {stage} loss at step {step}: {loss.data!r}"
        )
