"""Swarm-coupled trajectory prediction.

Predicts future image-plane positions for every tracklet in a swarm window
by combining three couplings: each tracklet's motion relative to the swarm
mean, appearance/posture cues attended over time, and interaction features
aggregated from spatial neighbors.  A dilated causal convolution stack with
a linear residual turns the combined sequence into per-tracklet features,
which a temporal projection plus a small MLP decode into absolute pixel
positions over the prediction horizon.

All projection weights are shared across tracklets, and every reduction
over the tracklet axis runs in ascending-id order, which makes the forward
pass exactly permutation-equivariant: reordering the window rows reorders
the predictions bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import CausalConv1d, ConfigurationError, Linear, Mlp, Module, MultiHeadAttention
from .tensor import (
    Tensor,
    ShapeError,
    concat,
    segment_sum,
    silu,
    vector_norm,
)


@dataclass
class SwarmWindow:
    """T-frame history of positions, velocities and embeddings for N tracklets.

    Velocities are the first differences of the positions with the first
    frame's velocity fixed at zero (there is no pre-window position), an
    invariant maintained by construction.
    """

    positions: np.ndarray  # [N, T, 2] pixel centers
    velocities: np.ndarray  # [N, T, 2] pixels/frame
    embeddings: np.ndarray  # [N, T, d]
    ids: list[int]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.ids = [int(i) for i in self.ids]
        n, t = self.positions.shape[:2]
        if n < 1 or t < 2:
            raise ShapeError("swarm window needs N >= 1 tracklets and T >= 2 frames")
        if self.positions.shape != (n, t, 2) or self.velocities.shape != (n, t, 2):
            raise ShapeError("positions/velocities must be [N, T, 2]")
        if self.embeddings.shape[:2] != (n, t):
            raise ShapeError("embeddings must be [N, T, d]")
        if len(self.ids) != n:
            raise ShapeError("ids must list one identity per tracklet")
        if len(set(self.ids)) != n:
            raise ValueError("tracklet ids must be unique")
        if not (
            np.all(np.isfinite(self.positions))
            and np.all(np.isfinite(self.embeddings))
        ):
            raise ValueError("swarm window contains non-finite values")

    @classmethod
    def from_positions(cls, positions, embeddings, ids) -> "SwarmWindow":
        positions = np.asarray(positions, dtype=np.float64)
        velocities = np.zeros_like(positions)
        velocities[:, 1:] = positions[:, 1:] - positions[:, :-1]
        return cls(positions, velocities, embeddings, ids)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def length(self) -> int:
        return self.positions.shape[1]

    def permuted(self, order) -> "SwarmWindow":
        order = list(order)
        return SwarmWindow(
            self.positions[order],
            self.velocities[order],
            self.embeddings[order],
            [self.ids[i] for i in order],
        )


@dataclass
class Prediction:
    positions: np.ndarray  # [N, P, 2] absolute pixels
    ids: list[int]


def swarm_stats(window: SwarmWindow):
    """Frame-wise mean position and velocity over all tracklets.

    Summation runs in ascending-id order so the result is bit-identical
    under any permutation of the window rows.
    """
    order = np.argsort(window.ids, kind="stable")
    n = window.count
    mean_pos = window.positions[order].sum(axis=0) / n
    mean_vel = window.velocities[order].sum(axis=0) / n
    return mean_pos, mean_vel


def constant_velocity_predict(window: SwarmWindow, horizon: int) -> Prediction:
    """Straight-line extrapolation from the last observed velocity."""
    last_pos = window.positions[:, -1]
    last_vel = window.velocities[:, -1]
    steps = np.arange(1, horizon + 1, dtype=np.float64)
    out = last_pos[:, None, :] + steps[None, :, None] * last_vel[:, None, :]
    return Prediction(out, list(window.ids))


@dataclass
class PredictorConfig:
    feature_dim: int = 16
    heads: int = 4
    embed_dim: int = 8
    neighbors: int = 2
    neighbor_radius: float = 256.0
    kernel: int = 3
    dilation: int = 2
    out_dim: int = 0  # 0 -> feature_dim
    history_len: int = 8
    horizon: int = 12
    coord_scale: float = 128.0  # pixels per internal coordinate unit

    def __post_init__(self):
        if self.out_dim == 0:
            self.out_dim = self.feature_dim
        if self.feature_dim % self.heads != 0:
            raise ConfigurationError("feature_dim must be divisible by heads")
        if self.coord_scale <= 0:
            raise ConfigurationError("coord_scale must be positive")


class SwarmPredictor(Module):
    """Full prediction pipeline from :class:`SwarmWindow` to pixel positions."""

    def __init__(self, cfg: PredictorConfig, rng):
        f = cfg.feature_dim
        self.cfg = cfg
        self.pos_rel = Linear(2, f, rng)
        self.pos_mean = Linear(2, f, rng)
        self.vel_rel = Linear(2, f, rng)
        self.vel_mean = Linear(2, f, rng)
        self.embed_proj = Linear(cfg.embed_dim, f, rng)
        self.motion_fuse = Linear(2 * f, f, rng)
        self.temporal_attn = MultiHeadAttention(f, f, f, f, cfg.heads, rng)
        self.temporal_mlp = Mlp(f, f, f, rng)
        self.neighbor_rel = Linear(f, f, rng)
        self.neighbor_fuse = Linear(3 * f, f, rng)
        self.interact_out = Linear(2 * f, f, rng)
        self.agent_attn = MultiHeadAttention(f, f, f, f, cfg.heads, rng)
        self.residual_proj = Linear(2 * f, cfg.out_dim, rng)
        self.conv1 = CausalConv1d(2 * f, cfg.out_dim, cfg.kernel, cfg.dilation, rng)
        self.conv2 = CausalConv1d(cfg.out_dim, cfg.out_dim, cfg.kernel, cfg.dilation, rng)
        self.time_proj = Linear(cfg.history_len, cfg.horizon, rng)
        self.decode_mlp = Mlp(cfg.out_dim, cfg.out_dim, 2, rng)

    # -- pipeline stages -------------------------------------------------------

    def encode(self, window: SwarmWindow):
        """Project positions, velocities and embeddings into the latent space.

        Position/velocity features combine the tracklet's deviation from the
        swarm mean with a separately projected copy of the mean itself, so
        each tracklet sees both its own motion and the collective trend.
        Coordinates enter in units of ``coord_scale`` pixels (and leave
        :meth:`decode` the same way), which keeps activations O(1) at any
        image size.
        """
        if window.embeddings.shape[2] != self.cfg.embed_dim:
            raise ShapeError(
                f"window embedding dim {window.embeddings.shape[2]} != "
                f"configured {self.cfg.embed_dim}"
            )
        scale = 1.0 / self.cfg.coord_scale
        mean_pos, mean_vel = swarm_stats(window)
        pos_feat = self.pos_rel(
            Tensor((window.positions - mean_pos) * scale)
        ) + self.pos_mean(Tensor(mean_pos * scale))
        vel_feat = self.vel_rel(
            Tensor((window.velocities - mean_vel) * scale)
        ) + self.vel_mean(Tensor(mean_vel * scale))
        emb_feat = self.embed_proj(Tensor(window.embeddings))
        motion = self.motion_fuse(concat([pos_feat, vel_feat], axis=-1))
        return pos_feat, vel_feat, emb_feat, motion

    def temporal_attention(self, motion: Tensor, emb_feat: Tensor) -> Tensor:
        """Attend over time per tracklet: posture queries, motion keys/values."""
        return self.temporal_mlp(self.temporal_attn(emb_feat, motion, motion))

    def neighbor_sets(self, window: SwarmWindow):
        """Up to ``neighbors`` nearest tracklets within the radius, by mean
        distance of raw positions over the window; ties break on ascending id.

        Returns (source_idx, neighbor_idx) arrays over the selected pairs,
        ordered by (source, neighbor) for deterministic accumulation.
        """
        n = window.count
        ids = np.asarray(window.ids)
        diffs = window.positions[:, None, :, :] - window.positions[None, :, :, :]
        dist = np.sqrt((diffs**2).sum(axis=-1)).mean(axis=-1)  # [N, N]
        src, tgt = [], []
        for i in range(n):
            candidates = [
                (dist[i, j], ids[j], j)
                for j in range(n)
                if j != i and dist[i, j] <= self.cfg.neighbor_radius
            ]
            candidates.sort()
            for _, _, j in candidates[: self.cfg.neighbors]:
                src.append(i)
                tgt.append(j)
        return np.asarray(src, dtype=np.int64), np.asarray(tgt, dtype=np.int64)

    def neighbor_interaction(self, window, pos_feat: Tensor, vel_feat: Tensor) -> Tensor:
        """Aggregate pairwise interaction features; residual on the position
        features.  Tracklets with no neighbor in range use a zero sum."""
        n = window.count
        src, tgt = self.neighbor_sets(window)
        if len(src) > 0:
            vi = vel_feat[src]
            vj = vel_feat[tgt]
            rel = self.neighbor_rel(pos_feat[src] - pos_feat[tgt])
            pair = self.neighbor_fuse(concat([vi, vj, rel], axis=-1))
            neighbor_sum = segment_sum(pair, src, n)
        else:
            neighbor_sum = Tensor(np.zeros(pos_feat.shape))
        return pos_feat + self.interact_out(concat([vel_feat, neighbor_sum], axis=-1))

    def agent_attention(self, interact: Tensor, emb_feat: Tensor) -> Tensor:
        """Attend over the tracklet axis per frame (frame-batched)."""
        inter_t = interact.transpose((1, 0, 2))
        emb_t = emb_feat.transpose((1, 0, 2))
        return self.agent_attn(emb_t, inter_t, inter_t)

    def temporal_residual(self, temporal: Tensor, agent: Tensor) -> Tensor:
        """Concatenate both attention branches, then linear residual plus a
        two-layer dilated causal convolution stack (causal in time)."""
        seq = concat([temporal, agent.transpose((1, 0, 2))], axis=-1)
        return self.residual_proj(seq) + self.conv2(silu(self.conv1(seq)))

    def decode(self, features: Tensor) -> Tensor:
        """Map the temporal axis T -> P, then per-step MLP to 2 coordinates
        (absolute pixels after undoing the coordinate scaling)."""
        per_channel = features.transpose((0, 2, 1))  # [N, d_out, T]
        extended = self.time_proj(per_channel)  # [N, d_out, P]
        return self.decode_mlp(extended.transpose((0, 2, 1))) * self.cfg.coord_scale

    # -- public entry points -------------------------------------------------------

    def predict_tensor(self, window: SwarmWindow) -> Tensor:
        """Differentiable forward pass; output rows follow the input order."""
        if window.length != self.cfg.history_len:
            raise ShapeError(
                f"window length {window.length} != configured history "
                f"{self.cfg.history_len}"
            )
        order = np.argsort(window.ids, kind="stable")
        sorted_window = window.permuted(order)
        pos_feat, vel_feat, emb_feat, motion = self.encode(sorted_window)
        temporal = self.temporal_attention(motion, emb_feat)
        interact = self.neighbor_interaction(sorted_window, pos_feat, vel_feat)
        agent = self.agent_attention(interact, emb_feat)
        features = self.temporal_residual(temporal, agent)
        decoded = self.decode(features)
        inverse = np.argsort(order, kind="stable")
        return decoded[inverse]

    def forward(self, window: SwarmWindow) -> Prediction:
        return Prediction(self.predict_tensor(window).data.copy(), list(window.ids))

    __call__ = forward


def motion_loss(predicted: Tensor, target) -> Tensor:
    """Mean Euclidean distance between predicted and target positions."""
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ShapeError(
            f"prediction shape {predicted.shape} != target {target.shape}"
        )
    return vector_norm(predicted - Tensor(target), axis=-1).mean()


def average_displacement_error(predicted, target) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.sqrt(((predicted - target) ** 2).sum(-1)).mean())


# -- window import/export --------------------------------------------------------


def save_window(path, window: SwarmWindow):
    """Columnar text table: frame, id, cx, cy, e_1..e_d (17-digit floats)."""
    d = window.embeddings.shape[2]
    header = "frame id cx cy " + " ".join(f"e{i + 1}" for i in range(d))
    lines = [header]
    for t in range(window.length):
        for i, track_id in enumerate(window.ids):
            vals = [f"{window.positions[i, t, 0]:.17g}", f"{window.positions[i, t, 1]:.17g}"]
            vals += [f"{v:.17g}" for v in window.embeddings[i, t]]
            lines.append(f"{t} {track_id} " + " ".join(vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_window(path) -> SwarmWindow:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    rows = [ln.split() for ln in lines[1:]]
    frames = sorted({int(r[0]) for r in rows})
    ids = sorted({int(r[1]) for r in rows})
    frame_index = {f: k for k, f in enumerate(frames)}
    id_index = {i: k for k, i in enumerate(ids)}
    d = len(rows[0]) - 4
    positions = np.zeros((len(ids), len(frames), 2))
    embeddings = np.zeros((len(ids), len(frames), d))
    for r in rows:
        t = frame_index[int(r[0])]
        i = id_index[int(r[1])]
        positions[i, t] = [float(r[2]), float(r[3])]
        embeddings[i, t] = [float(v) for v in r[4:]]
    return SwarmWindow.from_positions(positions, embeddings, ids)
