"""Tracking evaluation: MOTA, IDF1, HOTA, and identity switches.

Sequences are dicts mapping frame index to a list of ``(id, center_box)``
pairs.  Per-frame CLEAR correspondence keeps the previous frame's matches
while they still overlap, then assigns the remainder to maximize match
count first and total IoU second.  An identity switch is counted whenever
a ground-truth object's matched prediction id differs from its most recent
previous match.

The ambiguity in the published metric names is pinned by executable
references: :mod:`swarmtrack.reference` recomputes every metric by
exhaustive enumeration on small instances, and the test suite holds this
module to exact agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

_FORBIDDEN = 1e9  # cost for below-threshold pairs; dominates any IoU total

DEFAULT_ALPHAS = tuple(np.round(np.arange(0.05, 0.96, 0.05), 2))


class EvaluationError(ValueError):
    pass


@dataclass
class EvalResult:
    mota: float
    idf1: float
    hota: float
    idsw: int
    fp: int
    fn: int
    gt_count: int
    det_a: dict = field(default_factory=dict)  # alpha -> detection accuracy
    ass_a: dict = field(default_factory=dict)  # alpha -> association accuracy

    def to_dict(self):
        return {
            "mota": self.mota,
            "idf1": self.idf1,
            "hota": self.hota,
            "idsw": self.idsw,
            "fp": self.fp,
            "fn": self.fn,
            "gt_count": self.gt_count,
            "det_a": {f"{a:.2f}": v for a, v in self.det_a.items()},
            "ass_a": {f"{a:.2f}": v for a, v in self.ass_a.items()},
        }


def _boxes(entries):
    if not entries:
        return np.zeros((0, 4))
    return np.stack([np.asarray(box, dtype=np.float64) for _, box in entries])


def _assign_max_matches(overlap, thresh):
    """Maximize match count, then total IoU, over pairs with IoU >= thresh."""
    rows, cols = overlap.shape
    if rows == 0 or cols == 0:
        return []
    cost = np.where(overlap >= thresh, 1.0 - overlap, _FORBIDDEN)
    r_idx, c_idx = kernels.lsap_minimize(cost)
    return [(int(r), int(c)) for r, c in zip(r_idx, c_idx) if overlap[r, c] >= thresh]


def match_frame(gt_entries, pred_entries, iou_thresh=0.5, prev_map=None):
    """One frame of CLEAR correspondence.

    ``prev_map`` carries the previous frame's gt-id -> pred-id matches for
    the persistence rule.  Returns (matches dict, fp_count, fn_count).
    """
    prev_map = prev_map or {}
    gt_ids = [gid for gid, _ in gt_entries]
    pred_ids = [pid for pid, _ in pred_entries]
    gt_boxes = _boxes(gt_entries)
    pred_boxes = _boxes(pred_entries)
    overlap = kernels.iou_matrix(gt_boxes, pred_boxes)

    matches: dict = {}
    used_gt, used_pred = set(), set()
    pred_index = {pid: j for j, pid in enumerate(pred_ids)}
    for gi, gid in enumerate(gt_ids):
        pid = prev_map.get(gid)
        if pid is None or pid not in pred_index:
            continue
        pj = pred_index[pid]
        if pj in used_pred:
            continue
        if overlap[gi, pj] >= iou_thresh:
            matches[gid] = pid
            used_gt.add(gi)
            used_pred.add(pj)

    rest_gt = [gi for gi in range(len(gt_ids)) if gi not in used_gt]
    rest_pred = [pj for pj in range(len(pred_ids)) if pj not in used_pred]
    if rest_gt and rest_pred:
        sub = overlap[np.ix_(rest_gt, rest_pred)]
        for r, c in _assign_max_matches(sub, iou_thresh):
            matches[gt_ids[rest_gt[r]]] = pred_ids[rest_pred[c]]
            used_gt.add(rest_gt[r])
            used_pred.add(rest_pred[c])

    fp = len(pred_ids) - len(used_pred)
    fn = len(gt_ids) - len(used_gt)
    return matches, fp, fn


@dataclass
class ClearCounts:
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    gt: int = 0
    matches_per_frame: dict = field(default_factory=dict)


def accumulate_clear(gt_frames, pred_frames, iou_thresh=0.5) -> ClearCounts:
    counts = ClearCounts()
    frames = sorted(set(gt_frames) | set(pred_frames))
    prev_map: dict = {}
    last_matched: dict = {}
    for frame in frames:
        gt_entries = gt_frames.get(frame, [])
        pred_entries = pred_frames.get(frame, [])
        counts.gt += len(gt_entries)
        matches, fp, fn = match_frame(gt_entries, pred_entries, iou_thresh, prev_map)
        counts.fp += fp
        counts.fn += fn
        for gid, pid in matches.items():
            if gid in last_matched and last_matched[gid] != pid:
                counts.idsw += 1
            last_matched[gid] = pid
        prev_map = matches
        counts.matches_per_frame[frame] = dict(matches)
    return counts


def mota(counts: ClearCounts) -> float:
    if counts.gt == 0:
        raise EvaluationError("MOTA undefined: no ground-truth boxes")
    return 1.0 - (counts.fn + counts.fp + counts.idsw) / counts.gt


def idsw_count(counts: ClearCounts) -> int:
    return counts.idsw


def _id_stats(gt_frames, pred_frames, iou_thresh):
    """Per-(gt id, pred id) co-overlap frame counts plus appearance totals."""
    gt_total: dict = {}
    pred_total: dict = {}
    pair_count: dict = {}
    frames = sorted(set(gt_frames) | set(pred_frames))
    for frame in frames:
        gt_entries = gt_frames.get(frame, [])
        pred_entries = pred_frames.get(frame, [])
        for gid, _ in gt_entries:
            gt_total[gid] = gt_total.get(gid, 0) + 1
        for pid, _ in pred_entries:
            pred_total[pid] = pred_total.get(pid, 0) + 1
        if gt_entries and pred_entries:
            overlap = kernels.iou_matrix(_boxes(gt_entries), _boxes(pred_entries))
            for gi, (gid, _) in enumerate(gt_entries):
                for pj, (pid, _) in enumerate(pred_entries):
                    if overlap[gi, pj] >= iou_thresh:
                        pair_count[(gid, pid)] = pair_count.get((gid, pid), 0) + 1
    return gt_total, pred_total, pair_count


def idf1(gt_frames, pred_frames, iou_thresh=0.5) -> float:
    """Identity F1 under the optimal global gt-id/pred-id assignment."""
    gt_total, pred_total, pair_count = _id_stats(gt_frames, pred_frames, iou_thresh)
    total_gt = sum(gt_total.values())
    total_pred = sum(pred_total.values())
    if total_gt == 0 and total_pred == 0:
        return 1.0
    gt_ids = sorted(gt_total)
    pred_ids = sorted(pred_total)
    idtp = 0
    if gt_ids and pred_ids:
        benefit = np.zeros((len(gt_ids), len(pred_ids)))
        for (gid, pid), count in pair_count.items():
            benefit[gt_ids.index(gid), pred_ids.index(pid)] = count
        r_idx, c_idx = kernels.lsap_minimize(-benefit)
        idtp = int(benefit[r_idx, c_idx].sum())
    idfn = total_gt - idtp
    idfp = total_pred - idtp
    return 2.0 * idtp / (2.0 * idtp + idfp + idfn)


def hota(gt_frames, pred_frames, alphas=DEFAULT_ALPHAS):
    """HOTA: geometric mean of detection and association accuracy, averaged
    over localization thresholds.

    Per alpha, candidate pairs need IoU >= alpha; frames match maximizing
    the pair's global association potential (Jaccard of co-overlap counts)
    with a small IoU tiebreak.  Association accuracy averages, over matched
    detections, Jaccard(TPA, FNA, FPA) of the matched id pair.
    """
    total_gt = sum(len(v) for v in gt_frames.values())
    total_pred = sum(len(v) for v in pred_frames.values())
    if total_gt == 0 and total_pred == 0:
        return 1.0, {a: 1.0 for a in alphas}, {a: 1.0 for a in alphas}

    frames = sorted(set(gt_frames) | set(pred_frames))
    det_a: dict = {}
    ass_a: dict = {}
    scores = []
    for alpha in alphas:
        gt_total, pred_total, pair_count = _id_stats(gt_frames, pred_frames, alpha)
        potential = {}
        for (gid, pid), count in pair_count.items():
            potential[(gid, pid)] = count / (
                gt_total[gid] + pred_total[pid] - count
            )
        tp_pairs = []
        for frame in frames:
            gt_entries = gt_frames.get(frame, [])
            pred_entries = pred_frames.get(frame, [])
            if not gt_entries or not pred_entries:
                continue
            overlap = kernels.iou_matrix(_boxes(gt_entries), _boxes(pred_entries))
            score = np.full(overlap.shape, -_FORBIDDEN)
            for gi, (gid, _) in enumerate(gt_entries):
                for pj, (pid, _) in enumerate(pred_entries):
                    if overlap[gi, pj] >= alpha:
                        score[gi, pj] = (
                            potential.get((gid, pid), 0.0) + 1e-9 * overlap[gi, pj]
                        )
            r_idx, c_idx = kernels.lsap_minimize(-score)
            for r, c in zip(r_idx, c_idx):
                if overlap[r, c] >= alpha:
                    tp_pairs.append((gt_entries[r][0], pred_entries[c][0]))
        tp = len(tp_pairs)
        fn = total_gt - tp
        fp = total_pred - tp
        det_a[alpha] = tp / (tp + fn + fp) if (tp + fn + fp) else 1.0
        if tp == 0:
            ass_a[alpha] = 0.0
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
            ass_a[alpha] = total_ass / tp
        scores.append(np.sqrt(det_a[alpha] * ass_a[alpha]))
    return float(np.mean(scores)), det_a, ass_a


def evaluate(gt_frames, pred_frames, iou_thresh=0.5, alphas=DEFAULT_ALPHAS) -> EvalResult:
    counts = accumulate_clear(gt_frames, pred_frames, iou_thresh)
    hota_score, det_a, ass_a = hota(gt_frames, pred_frames, alphas)
    return EvalResult(
        mota=mota(counts),
        idf1=idf1(gt_frames, pred_frames, iou_thresh),
        hota=hota_score,
        idsw=counts.idsw,
        fp=counts.fp,
        fn=counts.fn,
        gt_count=counts.gt,
        det_a=det_a,
        ass_a=ass_a,
    )


def frames_from_mot(mot_frames):
    """Adapt :func:`swarmtrack.motio.read_mot_file` output to metric input."""
    return {
        frame: [(tid, box) for tid, box, _ in rows]
        for frame, rows in mot_frames.items()
    }


def format_report(result: EvalResult) -> str:
    lines = [
        f"{'metric':<10}{'value':>12}",
        f"{'MOTA':<10}{result.mota:>12.4f}",
        f"{'IDF1':<10}{result.idf1:>12.4f}",
        f"{'HOTA':<10}{result.hota:>12.4f}",
        f"{'IDSW':<10}{result.idsw:>12d}",
        f"{'FP':<10}{result.fp:>12d}",
        f"{'FN':<10}{result.fn:>12d}",
        f"{'GT':<10}{result.gt_count:>12d}",
    ]
    return "\n".join(lines)
