"""Evaluation metrics against enumeration references and hand cases."""

import numpy as np
import pytest

from swarmtrack import reference
from swarmtrack.metrics import (
    EvaluationError,
    accumulate_clear,
    evaluate,
    frames_from_mot,
    format_report,
    hota,
    idf1,
    idsw_count,
    match_frame,
    mota,
)


def box(cx, cy, w=10.0, h=10.0):
    return np.array([cx, cy, w, h])


def track(frames_positions, tid=1):
    """Build a frame dict for one id from {frame: (cx, cy)}."""
    return {f: [(tid, box(*p))] for f, p in frames_positions.items()}


def merge(*sequences):
    out = {}
    for seq in sequences:
        for frame, entries in seq.items():
            out.setdefault(frame, []).extend(entries)
    return out


def random_sequences(rng, max_ids=4, max_frames=6):
    frames = int(rng.integers(1, max_frames + 1))
    gt, pred = {}, {}
    for f in range(frames):
        gt[f] = [
            (gid, rng.uniform(10, 90, 2).tolist() + rng.uniform(6, 14, 2).tolist())
            for gid in range(1, int(rng.integers(1, max_ids + 1)) + 1)
            if rng.random() > 0.25
        ]
        pred[f] = [
            (pid, rng.uniform(10, 90, 2).tolist() + rng.uniform(6, 14, 2).tolist())
            for pid in range(1, int(rng.integers(1, max_ids + 1)) + 1)
            if rng.random() > 0.25
        ]
    return gt, pred


class TestMatchFrame:
    def test_identical_sets(self):
        entries = [(1, box(10, 10)), (2, box(40, 40))]
        matches, fp, fn = match_frame(entries, entries)
        assert matches == {1: 1, 2: 2}
        assert fp == 0 and fn == 0

    def test_disjoint_sets(self):
        gt = [(1, box(10, 10))]
        pred = [(5, box(80, 80))]
        matches, fp, fn = match_frame(gt, pred)
        assert matches == {} and fp == 1 and fn == 1

    def test_persistence_beats_better_iou(self):
        # previous match persists even when another prediction overlaps more
        gt = [(1, box(10, 10))]
        pred = [(7, box(11, 11)), (8, box(10, 10))]
        matches, _, _ = match_frame(gt, pred, prev_map={1: 7})
        assert matches[1] == 7

    def test_matches_brute_force_assignment(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            gt = [(g, rng.uniform(10, 60, 2).tolist() + [12, 12]) for g in range(1, 4)]
            pred = [(p, rng.uniform(10, 60, 2).tolist() + [12, 12]) for p in range(1, 4)]
            got, fp, fn = match_frame(gt, pred)
            fp_ref, fn_ref, _, _, _ = reference.clear_reference({0: gt}, {0: pred})
            assert (fp, fn) == (fp_ref, fn_ref)


class TestMota:
    def test_perfect(self):
        gt = track({f: (10 + 2 * f, 20) for f in range(6)})
        counts = accumulate_clear(gt, gt)
        assert mota(counts) == 1.0
        assert idsw_count(counts) == 0

    def test_single_miss(self):
        gt = track({f: (10 + 2 * f, 20) for f in range(10)})
        pred = track({f: (10 + 2 * f, 20) for f in range(9)})
        counts = accumulate_clear(gt, pred)
        assert mota(counts) == pytest.approx(0.9)

    def test_all_missed(self):
        gt = track({f: (10, 20) for f in range(5)})
        counts = accumulate_clear(gt, {})
        assert mota(counts) == 0.0

    def test_undefined_without_gt(self):
        counts = accumulate_clear({}, track({0: (10, 10)}))
        with pytest.raises(EvaluationError):
            mota(counts)


class TestIdsw:
    def test_stable(self):
        gt = track({f: (10 + f, 20) for f in range(6)})
        assert accumulate_clear(gt, gt).idsw == 0

    def test_one_flip(self):
        gt = track({f: (10 + f, 20) for f in range(6)})
        pred = merge(
            {f: [(1, box(10 + f, 20))] for f in range(3)},
            {f: [(2, box(10 + f, 20))] for f in range(3, 6)},
        )
        assert accumulate_clear(gt, pred).idsw == 1

    def test_scripted_three_object_scenario(self):
        # objects A and B swap prediction ids mid-sequence; C stays stable:
        # hand count is exactly 2 switches
        gt = merge(
            {f: [(1, box(10, 10 + f))] for f in range(4)},
            {f: [(2, box(50, 10 + f))] for f in range(4)},
            {f: [(3, box(90, 10 + f))] for f in range(4)},
        )
        pred = merge(
            {f: [(11 if f < 2 else 12, box(10, 10 + f))] for f in range(4)},
            {f: [(12 if f < 2 else 11, box(50, 10 + f))] for f in range(4)},
            {f: [(13, box(90, 10 + f))] for f in range(4)},
        )
        assert accumulate_clear(gt, pred).idsw == 2

    def test_gap_then_same_id_no_switch(self):
        gt = track({f: (10 + f, 20) for f in range(6)})
        pred = {f: [(4, box(10 + f, 20))] for f in (0, 1, 4, 5)}
        assert accumulate_clear(gt, pred).idsw == 0


class TestIdf1:
    def test_perfect(self):
        gt = track({f: (10 + f, 20) for f in range(6)})
        assert idf1(gt, gt) == 1.0

    def test_half_coverage_case(self):
        # one gt id covered half its frames by one pred id -> IDF1 = 2/3:
        # IDTP = T/2, IDFN = T/2, IDFP = 0
        gt = track({f: (10 + f, 20) for f in range(8)})
        pred = {f: [(5, box(10 + f, 20))] for f in range(4)}
        value = idf1(gt, pred)
        idtp, idfn, idfp = 4, 4, 0
        assert value == pytest.approx(2 * idtp / (2 * idtp + idfp + idfn))
        assert value == pytest.approx(reference.idf1_reference(gt, pred))

    def test_half_matched_full_length_prediction(self):
        # prediction exists all T frames but only overlaps for the first half:
        # IDTP = T/2, IDFP = T/2, IDFN = T/2 -> IDF1 = 1/2
        gt = track({f: (10 + f, 20) for f in range(8)})
        pred = {
            f: [(5, box(10 + f, 20) if f < 4 else box(90, 90))] for f in range(8)
        }
        value = idf1(gt, pred)
        assert value == pytest.approx(0.5)
        assert value == pytest.approx(reference.idf1_reference(gt, pred))

    def test_both_empty_convention(self):
        assert idf1({}, {}) == 1.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(150):
            gt, pred = random_sequences(rng)
            assert idf1(gt, pred) == pytest.approx(
                reference.idf1_reference(gt, pred), abs=1e-12
            )


class TestHota:
    def test_perfect(self):
        gt = track({f: (10 + f, 20) for f in range(6)})
        score, det_a, ass_a = hota(gt, gt)
        assert score == pytest.approx(1.0)
        assert all(v == 1.0 for v in det_a.values())

    def test_split_track_half_association(self):
        gt = track({f: (10 + f, 20) for f in range(8)})
        pred = merge(
            {f: [(5, box(10 + f, 20))] for f in range(4)},
            {f: [(6, box(10 + f, 20))] for f in range(4, 8)},
        )
        score, det_a, ass_a = hota(gt, pred)
        for alpha in det_a:
            assert det_a[alpha] == pytest.approx(1.0)
            assert ass_a[alpha] == pytest.approx(0.5)
        assert score == pytest.approx(np.sqrt(0.5))

    def test_empty_convention(self):
        score, _, _ = hota({}, {})
        assert score == 1.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(2)
        alphas = (0.25, 0.5, 0.75)
        for _ in range(100):
            gt, pred = random_sequences(rng)
            got, _, _ = hota(gt, pred, alphas)
            assert got == pytest.approx(
                reference.hota_reference(gt, pred, alphas), abs=1e-12
            )


class TestEvaluateAndReport:
    def test_gt_vs_gt_all_perfect(self):
        gt = merge(
            track({f: (10 + f, 20) for f in range(6)}, tid=1),
            track({f: (60, 20 + f) for f in range(6)}, tid=2),
        )
        result = evaluate(gt, gt)
        assert result.mota == 1.0
        assert result.idf1 == 1.0
        assert result.hota == pytest.approx(1.0)
        assert result.idsw == 0

    def test_id_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        gt, pred = random_sequences(rng, max_ids=3, max_frames=5)
        while not any(gt.values()):
            gt, pred = random_sequences(rng, max_ids=3, max_frames=5)
        relabel = {1: 71, 2: 72, 3: 73, 4: 74}
        pred2 = {
            f: [(relabel[pid], b) for pid, b in rows] for f, rows in pred.items()
        }
        r1 = evaluate(gt, pred)
        r2 = evaluate(gt, pred2)
        assert r1.mota == r2.mota
        assert r1.idf1 == r2.idf1
        assert r1.hota == r2.hota
        assert r1.idsw == r2.idsw

    def test_report_formatting(self):
        gt = track({f: (10 + f, 20) for f in range(4)})
        text = format_report(evaluate(gt, gt))
        assert "MOTA" in text and "1.0000" in text

    def test_frames_from_mot(self):
        frames = {1: [(3, box(10, 10), 0.9)], 2: [(3, box(11, 10), 0.8)]}
        adapted = frames_from_mot(frames)
        assert adapted[1][0][0] == 3
        assert np.array_equal(adapted[1][0][1], box(10, 10))

    def test_clear_counts_match_reference_sequences(self):
        rng = np.random.default_rng(4)
        for _ in range(150):
            gt, pred = random_sequences(rng)
            if not any(gt.values()):
                continue
            counts = accumulate_clear(gt, pred)
            fp, fn, idsw, gtc, mota_ref = reference.clear_reference(gt, pred)
            assert (counts.fp, counts.fn, counts.idsw, counts.gt) == (fp, fn, idsw, gtc)
            assert mota(counts) == pytest.approx(mota_ref, abs=1e-12)
