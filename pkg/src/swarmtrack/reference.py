"""Independent scalar-loop and enumeration references.

Everything here recomputes a result through the most literal route
available: explicit index loops for the network operations, exhaustive
permutation enumeration for assignments and metrics.  The implementations
deliberately share no code with the fast paths they check; the test suite
and the ``selfcheck`` CLI subcommand hold the two routes to agreement.
"""

from __future__ import annotations

import itertools

import numpy as np


# -- network operation oracles ---------------------------------------------------


def linear_reference(x, weight, bias=None):
    """Triple-loop affine map on the last axis."""
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros((flat.shape[0], weight.shape[1]))
    for r in range(flat.shape[0]):
        for j in range(weight.shape[1]):
            acc = 0.0
            for k in range(weight.shape[0]):
                acc += flat[r, k] * weight[k, j]
            if bias is not None:
                acc += bias[j]
            out[r, j] = acc
    return out.reshape(lead + (weight.shape[1],))


def _softmax_1d(v):
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def mha_reference(layer, query, key, value):
    """Per-head loop evaluation of a MultiHeadAttention layer."""
    q_all = linear_reference(query, layer.q_proj.weight.data, layer.q_proj.bias.data)
    k_all = linear_reference(key, layer.k_proj.weight.data, layer.k_proj.bias.data)
    v_all = linear_reference(value, layer.v_proj.weight.data, layer.v_proj.bias.data)
    batch, q_len = query.shape[0], query.shape[1]
    k_len = key.shape[1]
    d = layer.head_dim
    merged = np.zeros((batch, q_len, layer.out_dim))
    for b in range(batch):
        for h in range(layer.heads):
            lo = h * d
            for i in range(q_len):
                scores = np.zeros(k_len)
                for j in range(k_len):
                    acc = 0.0
                    for c in range(d):
                        acc += q_all[b, i, lo + c] * k_all[b, j, lo + c]
                    scores[j] = acc / np.sqrt(d)
                weights = _softmax_1d(scores)
                for c in range(d):
                    acc = 0.0
                    for j in range(k_len):
                        acc += weights[j] * v_all[b, j, lo + c]
                    merged[b, i, lo + c] = acc
    return linear_reference(merged, layer.out_proj.weight.data, layer.out_proj.bias.data)


def conv_reference(layer, x):
    """Direct tap-by-tap dilated causal convolution."""
    x = np.asarray(x, dtype=np.float64)
    batch, steps, _ = x.shape
    out = np.zeros((batch, steps, layer.out_channels))
    for b in range(batch):
        for t in range(steps):
            for o in range(layer.out_channels):
                acc = layer.bias.data[o]
                for k in range(layer.kernel):
                    src = t - (layer.kernel - 1 - k) * layer.dilation
                    if src < 0:
                        continue
                    for c in range(layer.in_channels):
                        acc += x[b, src, c] * layer.weight.data[k, c, o]
                out[b, t, o] = acc
    return out


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _silu(v):
    return v * _sigmoid(v)


def splat_reference(shape, centers_px, feats, sigma, stride, trunc_sigmas=6.0):
    """Full-grid scan with the same square truncation window as the kernel."""
    height, width, channels = shape
    out = np.zeros((height, width, channels))
    centers = np.asarray(centers_px, dtype=np.float64).reshape(-1, 2) / stride
    feats = np.asarray(feats, dtype=np.float64)
    radius = trunc_sigmas * sigma
    for i in range(centers.shape[0]):
        cx, cy = centers[i]
        for y in range(height):
            for x in range(width):
                dx = (x + 0.5) - cx
                dy = (y + 0.5) - cy
                if abs(dx) > radius or abs(dy) > radius:
                    continue
                w = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
                for c in range(channels):
                    out[y, x, c] += w * feats[i, c]
    return out


def fuse_reference(fuser, current, predictive):
    """Loop evaluation of both gated cross-attention stages."""
    rows, channels = current.shape
    cur = current.reshape(1, rows, channels)
    pred = predictive.reshape(1, rows, channels)
    gate1 = _sigmoid(linear_reference(cur, fuser.gate1.weight.data, fuser.gate1.bias.data))
    attn1 = mha_reference(fuser.attn1, cur, pred, pred)
    context = linear_reference(gate1 * attn1, fuser.out1.weight.data, fuser.out1.bias.data)
    augmented = np.concatenate([cur, context], axis=-1)
    gate2 = _sigmoid(linear_reference(cur, fuser.gate2.weight.data, fuser.gate2.bias.data))
    attn2 = mha_reference(fuser.attn2, augmented, augmented, cur)
    fused = cur + linear_reference(gate2 * attn2, fuser.out2.weight.data, fuser.out2.bias.data)
    return fused.reshape(rows, channels)


def predictor_reference(model, window):
    """Loop evaluation of the whole swarm predictor forward pass."""
    order = np.argsort(window.ids, kind="stable")
    inverse = np.argsort(order, kind="stable")
    sw = window.permuted(order)
    n, steps = sw.count, sw.length
    f = model.cfg.feature_dim

    scale = 1.0 / model.cfg.coord_scale
    mean_pos = sw.positions.sum(axis=0) / n
    mean_vel = sw.velocities.sum(axis=0) / n
    pos_feat = linear_reference(
        (sw.positions - mean_pos) * scale,
        model.pos_rel.weight.data,
        model.pos_rel.bias.data,
    ) + linear_reference(
        mean_pos * scale, model.pos_mean.weight.data, model.pos_mean.bias.data
    )
    vel_feat = linear_reference(
        (sw.velocities - mean_vel) * scale,
        model.vel_rel.weight.data,
        model.vel_rel.bias.data,
    ) + linear_reference(
        mean_vel * scale, model.vel_mean.weight.data, model.vel_mean.bias.data
    )
    emb_feat = linear_reference(
        sw.embeddings, model.embed_proj.weight.data, model.embed_proj.bias.data
    )
    motion = linear_reference(
        np.concatenate([pos_feat, vel_feat], axis=-1),
        model.motion_fuse.weight.data,
        model.motion_fuse.bias.data,
    )

    temporal = mha_reference(model.temporal_attn, emb_feat, motion, motion)
    hidden = _silu(
        linear_reference(
            temporal, model.temporal_mlp.fc1.weight.data, model.temporal_mlp.fc1.bias.data
        )
    )
    temporal = linear_reference(
        hidden, model.temporal_mlp.fc2.weight.data, model.temporal_mlp.fc2.bias.data
    )

    # neighbor aggregation (mean window distance, radius gate, id tie-break)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            dist[i, j] = np.mean(
                np.sqrt(((sw.positions[i] - sw.positions[j]) ** 2).sum(-1))
            )
    neighbor_sum = np.zeros((n, steps, f))
    for i in range(n):
        candidates = sorted(
            (dist[i, j], sw.ids[j], j)
            for j in range(n)
            if j != i and dist[i, j] <= model.cfg.neighbor_radius
        )
        for _, _, j in candidates[: model.cfg.neighbors]:
            rel = linear_reference(
                pos_feat[i] - pos_feat[j],
                model.neighbor_rel.weight.data,
                model.neighbor_rel.bias.data,
            )
            pair = linear_reference(
                np.concatenate([vel_feat[i], vel_feat[j], rel], axis=-1),
                model.neighbor_fuse.weight.data,
                model.neighbor_fuse.bias.data,
            )
            neighbor_sum[i] += pair
    interact = pos_feat + linear_reference(
        np.concatenate([vel_feat, neighbor_sum], axis=-1),
        model.interact_out.weight.data,
        model.interact_out.bias.data,
    )

    agent = mha_reference(
        model.agent_attn,
        emb_feat.transpose(1, 0, 2),
        interact.transpose(1, 0, 2),
        interact.transpose(1, 0, 2),
    )

    seq = np.concatenate([temporal, agent.transpose(1, 0, 2)], axis=-1)
    residual = linear_reference(
        seq, model.residual_proj.weight.data, model.residual_proj.bias.data
    )
    conv_out = conv_reference(model.conv2, _silu(conv_reference(model.conv1, seq)))
    features = residual + conv_out

    per_channel = features.transpose(0, 2, 1)
    extended = linear_reference(
        per_channel, model.time_proj.weight.data, model.time_proj.bias.data
    ).transpose(0, 2, 1)
    hidden = _silu(
        linear_reference(
            extended, model.decode_mlp.fc1.weight.data, model.decode_mlp.fc1.bias.data
        )
    )
    decoded = (
        linear_reference(
            hidden, model.decode_mlp.fc2.weight.data, model.decode_mlp.fc2.bias.data
        )
        * model.cfg.coord_scale
    )
    return decoded[inverse]


# -- assignment and metric oracles -------------------------------------------------


def assignment_reference(similarity):
    """Best total similarity over all injective row->col maps, by enumeration."""
    sim = np.asarray(similarity, dtype=np.float64)
    rows, cols = sim.shape
    best = -np.inf
    best_pairs = []
    if rows <= cols:
        for combo in itertools.permutations(range(cols), rows):
            total = sum(sim[i, c] for i, c in enumerate(combo))
            if total > best:
                best = total
                best_pairs = [(i, c) for i, c in enumerate(combo)]
    else:
        for combo in itertools.permutations(range(rows), cols):
            total = sum(sim[r, j] for j, r in enumerate(combo))
            if total > best:
                best = total
                best_pairs = sorted((r, j) for j, r in enumerate(combo))
    return best, best_pairs


def iou_reference(box_a, box_b):
    ax0, ax1 = box_a[0] - box_a[2] / 2, box_a[0] + box_a[2] / 2
    ay0, ay1 = box_a[1] - box_a[3] / 2, box_a[1] + box_a[3] / 2
    bx0, bx1 = box_b[0] - box_b[2] / 2, box_b[0] + box_b[2] / 2
    by0, by1 = box_b[1] - box_b[3] / 2, box_b[1] + box_b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (box_a[2] * box_a[3] + box_b[2] * box_b[3] - inter)


def _enumerate_matchings(n_rows, n_cols):
    """All injective partial maps rows -> cols (as lists of (r, c) pairs)."""
    results = [[]]
    for r in range(n_rows):
        extended = []
        for partial in results:
            used = {c for _, c in partial}
            extended.append(partial)  # r unmatched
            for c in range(n_cols):
                if c not in used:
                    extended.append(partial + [(r, c)])
        results = extended
    return results


def _best_frame_matching(score, eligible):
    """Maximize (match count, total score) over eligible pairs by enumeration."""
    best = (-1, -np.inf)
    best_pairs = []
    for pairs in _enumerate_matchings(score.shape[0], score.shape[1]):
        if any(not eligible[r, c] for r, c in pairs):
            continue
        key = (len(pairs), sum(score[r, c] for r, c in pairs))
        if key > best:
            best = key
            best_pairs = pairs
    return best_pairs


def clear_reference(gt_frames, pred_frames, iou_thresh=0.5):
    """CLEAR accumulation with enumerated per-frame matching.

    Returns (fp, fn, idsw, gt_count, mota)."""
    frames = sorted(set(gt_frames) | set(pred_frames))
    prev: dict = {}
    last_matched: dict = {}
    fp = fn = idsw = gt_count = 0
    for frame in frames:
        gt_entries = gt_frames.get(frame, [])
        pred_entries = pred_frames.get(frame, [])
        gt_count += len(gt_entries)
        overlap = np.zeros((len(gt_entries), len(pred_entries)))
        for gi, (_, gbox) in enumerate(gt_entries):
            for pj, (_, pbox) in enumerate(pred_entries):
                overlap[gi, pj] = iou_reference(gbox, pbox)
        matches = {}
        used_gt, used_pred = set(), set()
        pred_index = {pid: j for j, (pid, _) in enumerate(pred_entries)}
        for gi, (gid, _) in enumerate(gt_entries):
            pid = prev.get(gid)
            if pid is None or pid not in pred_index or pred_index[pid] in used_pred:
                continue
            if overlap[gi, pred_index[pid]] >= iou_thresh:
                matches[gid] = pid
                used_gt.add(gi)
                used_pred.add(pred_index[pid])
        rest_gt = [gi for gi in range(len(gt_entries)) if gi not in used_gt]
        rest_pred = [pj for pj in range(len(pred_entries)) if pj not in used_pred]
        if rest_gt and rest_pred:
            sub = overlap[np.ix_(rest_gt, rest_pred)]
            eligible = sub >= iou_thresh
            for r, c in _best_frame_matching(sub, eligible):
                matches[gt_entries[rest_gt[r]][0]] = pred_entries[rest_pred[c]][0]
                used_gt.add(rest_gt[r])
                used_pred.add(rest_pred[c])
        fp += len(pred_entries) - len(used_pred)
        fn += len(gt_entries) - len(used_gt)
        for gid in sorted(matches):
            pid = matches[gid]
            if gid in last_matched and last_matched[gid] != pid:
                idsw += 1
            last_matched[gid] = pid
        prev = matches
    mota_val = 1.0 - (fn + fp + idsw) / gt_count if gt_count else None
    return fp, fn, idsw, gt_count, mota_val


def idf1_reference(gt_frames, pred_frames, iou_thresh=0.5):
    """IDF1 by enumerating every injective gt-id -> pred-id assignment."""
    gt_ids = sorted({gid for v in gt_frames.values() for gid, _ in v})
    pred_ids = sorted({pid for v in pred_frames.values() for pid, _ in v})
    total_gt = sum(len(v) for v in gt_frames.values())
    total_pred = sum(len(v) for v in pred_frames.values())
    if total_gt == 0 and total_pred == 0:
        return 1.0
    count = {}
    frames = sorted(set(gt_frames) | set(pred_frames))
    for frame in frames:
        for gid, gbox in gt_frames.get(frame, []):
            for pid, pbox in pred_frames.get(frame, []):
                if iou_reference(gbox, pbox) >= iou_thresh:
                    count[(gid, pid)] = count.get((gid, pid), 0) + 1
    best_idtp = 0
    for pairs in _enumerate_matchings(len(gt_ids), len(pred_ids)):
        idtp = sum(count.get((gt_ids[r], pred_ids[c]), 0) for r, c in pairs)
        best_idtp = max(best_idtp, idtp)
    idfn = total_gt - best_idtp
    idfp = total_pred - best_idtp
    return 2.0 * best_idtp / (2.0 * best_idtp + idfp + idfn)


def hota_reference(gt_frames, pred_frames, alphas):
    """HOTA with enumerated per-frame matching (same objective as the fast
    path: association potential plus a 1e-9 IoU tiebreak)."""
    total_gt = sum(len(v) for v in gt_frames.values())
    total_pred = sum(len(v) for v in pred_frames.values())
    if total_gt == 0 and total_pred == 0:
        return 1.0
    frames = sorted(set(gt_frames) | set(pred_frames))
    scores = []
    for alpha in alphas:
        gt_total: dict = {}
        pred_total: dict = {}
        pair_count: dict = {}
        for frame in frames:
            for gid, _ in gt_frames.get(frame, []):
                gt_total[gid] = gt_total.get(gid, 0) + 1
            for pid, _ in pred_frames.get(frame, []):
                pred_total[pid] = pred_total.get(pid, 0) + 1
            for gid, gbox in gt_frames.get(frame, []):
                for pid, pbox in pred_frames.get(frame, []):
                    if iou_reference(gbox, pbox) >= alpha:
                        pair_count[(gid, pid)] = pair_count.get((gid, pid), 0) + 1
        potential = {
            pair: c / (gt_total[pair[0]] + pred_total[pair[1]] - c)
            for pair, c in pair_count.items()
        }
        tp_pairs = []
        for frame in frames:
            gt_entries = gt_frames.get(frame, [])
            pred_entries = pred_frames.get(frame, [])
            if not gt_entries or not pred_entries:
                continue
            overlap = np.zeros((len(gt_entries), len(pred_entries)))
            for gi, (_, gbox) in enumerate(gt_entries):
                for pj, (_, pbox) in enumerate(pred_entries):
                    overlap[gi, pj] = iou_reference(gbox, pbox)
            eligible = overlap >= alpha
            score = np.zeros(overlap.shape)
            for gi, (gid, _) in enumerate(gt_entries):
                for pj, (pid, _) in enumerate(pred_entries):
                    if eligible[gi, pj]:
                        score[gi, pj] = (
                            potential.get((gid, pid), 0.0) + 1e-9 * overlap[gi, pj]
                        )
            for r, c in sorted(_best_frame_matching(score, eligible)):
                tp_pairs.append((gt_entries[r][0], pred_entries[c][0]))
        tp = len(tp_pairs)
        fn = total_gt - tp
        fp = total_pred - tp
        det_a = tp / (tp + fn + fp) if (tp + fn + fp) else 1.0
        if tp == 0:
            ass_a = 0.0
        else:
            matched_count: dict = {}
            for pair in tp_pairs:
                matched_count[pair] = matched_count.get(pair, 0) + 1
            total_ass = 0.0
            for gid, pid in tp_pairs:
                tpa = matched_count[(gid, pid)]
                fna = gt_total.get(gid, 0) - tpa
                fpa = pred_total.get(pid, 0) - tpa
                total_ass += tpa / (tpa + fna + fpa)
            ass_a = total_ass / tp
        scores.append(np.sqrt(det_a * ass_a))
    return float(np.mean(scores))
