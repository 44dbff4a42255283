"""Online tracker: similarity matrices, assignment, lifecycle, determinism."""

import itertools
import json

import numpy as np
import pytest

from swarmtrack.detection import Detection
from swarmtrack.predictor import PredictorConfig, SwarmPredictor
from swarmtrack.reference import assignment_reference
from swarmtrack.tracker import (
    FrameOutput,
    Tracker,
    TrackerConfig,
    Tracklet,
    appearance_similarity,
    fuse_costs,
    hungarian_assign,
    motion_similarity,
    split_by_confidence,
    write_event_log,
)


def det(cx, cy, score=0.9, emb=None, size=10.0):
    if emb is not None:
        emb = np.asarray(emb, dtype=np.float64)
        emb = emb / np.linalg.norm(emb)
    return Detection([cx, cy, size, size], score, embedding=emb)


class TestSplit:
    def test_basic_partition(self):
        cfg = TrackerConfig(high_thresh=0.5)
        high, low = split_by_confidence([det(0, 0, 0.9), det(1, 1, 0.2)], cfg)
        assert [d.score for d in high] == [0.9]
        assert [d.score for d in low] == [0.2]

    def test_all_high(self):
        cfg = TrackerConfig(high_thresh=0.5)
        high, low = split_by_confidence([det(0, 0, 0.8), det(1, 1, 0.7)], cfg)
        assert len(high) == 2 and low == []

    def test_boundary_goes_high(self):
        cfg = TrackerConfig(high_thresh=0.6)
        high, low = split_by_confidence([det(0, 0, 0.6)], cfg)
        assert len(high) == 1 and low == []

    def test_order_preserved(self):
        cfg = TrackerConfig(high_thresh=0.5)
        dets = [det(i, i, s) for i, s in enumerate([0.9, 0.7, 0.8])]
        high, _ = split_by_confidence(dets, cfg)
        assert [d.box[0] for d in high] == [0, 1, 2]


class TestSimilarities:
    def _tracklet(self, tid, frame, d):
        return Tracklet(tid, frame, d, window=8)

    def test_appearance_identical_and_orthogonal(self):
        t1 = self._tracklet(1, 0, det(0, 0, emb=[1, 0, 0, 0]))
        d_same = det(5, 5, emb=[1, 0, 0, 0])
        d_orth = det(5, 5, emb=[0, 1, 0, 0])
        m = appearance_similarity([t1], [d_same, d_orth])
        assert m[0, 0] == pytest.approx(1.0)
        assert m[0, 1] == pytest.approx(0.0)

    def test_appearance_clamped_nonnegative(self):
        t1 = self._tracklet(1, 0, det(0, 0, emb=[1, 0, 0, 0]))
        m = appearance_similarity([t1], [det(1, 1, emb=[-1, 0, 0, 0])])
        assert m[0, 0] == 0.0

    def test_appearance_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        tracklets = []
        for tid in range(2):
            trk = self._tracklet(tid + 1, 0, det(0, 0, emb=rng.normal(size=4)))
            trk.update(1, det(1, 1, emb=rng.normal(size=4)))
            tracklets.append(trk)
        dets = [det(2, 2, emb=rng.normal(size=4)) for _ in range(3)]
        m = appearance_similarity(tracklets, dets)
        for i, trk in enumerate(tracklets):
            mean = np.mean([e for e in trk.embeddings], axis=0)
            for j, d in enumerate(dets):
                cos = mean @ d.embedding / (
                    np.linalg.norm(mean) * np.linalg.norm(d.embedding)
                )
                assert m[i, j] == pytest.approx(max(0.0, cos), abs=1e-12)

    def test_motion_exact_hit(self):
        cfg = TrackerConfig(motion_scale=40.0)
        t1 = self._tracklet(1, 0, det(10, 10))
        m = motion_similarity([t1], [det(30, 10)], np.array([[30.0, 10.0]]), cfg)
        assert m[0, 0] == pytest.approx(1.0)

    def test_motion_scale_distance(self):
        cfg = TrackerConfig(motion_scale=40.0)
        t1 = self._tracklet(1, 0, det(0, 0))
        m = motion_similarity([t1], [det(40, 0)], np.array([[0.0, 0.0]]), cfg)
        assert m[0, 0] == pytest.approx(np.exp(-1.0))

    def test_motion_gate(self):
        cfg = TrackerConfig(motion_scale=40.0)
        t1 = self._tracklet(1, 0, det(0, 0))
        m = motion_similarity([t1], [det(121, 0)], np.array([[0.0, 0.0]]), cfg)
        assert m[0, 0] == 0.0

    def test_fuse_identity_and_annihilator(self):
        a = np.array([[1.0, 1.0], [0.5, 0.0]])
        s = np.array([[0.3, 0.7], [0.2, 0.9]])
        fused = fuse_costs(a, s)
        assert np.array_equal(fused[0], s[0])
        assert fused[1, 1] == 0.0

    def test_fuse_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse_costs(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_fuse_matches_elementwise(self):
        rng = np.random.default_rng(1)
        a, s = rng.random((3, 4)), rng.random((3, 4))
        assert np.array_equal(fuse_costs(a, s), a * s)


class TestHungarian:
    def test_identity_dominant(self):
        sim = np.eye(3) * 0.9 + 0.05
        matches, ur, uc = hungarian_assign(sim)
        assert matches == [(0, 0), (1, 1), (2, 2)]

    def test_two_by_two(self):
        sim = np.array([[0.9, 0.2], [0.3, 0.8]])
        matches, _, _ = hungarian_assign(sim)
        total = sum(sim[r, c] for r, c in matches)
        assert matches == [(0, 0), (1, 1)]
        assert total == pytest.approx(1.7)

    def test_min_similarity_filter(self):
        sim = np.array([[0.9, 0.0], [0.0, 0.01]])
        matches, ur, uc = hungarian_assign(sim, min_similarity=0.05)
        assert matches == [(0, 0)]
        assert ur == [1] and uc == [1]

    def test_empty_inputs(self):
        matches, ur, uc = hungarian_assign(np.zeros((0, 3)))
        assert matches == [] and ur == [] and uc == [0, 1, 2]

    def test_matches_brute_force_up_to_7(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 8))
            sim = rng.random((rows, cols))
            matches, _, _ = hungarian_assign(sim)
            got = sum(sim[r, c] for r, c in matches)
            best, _ = assignment_reference(sim)
            assert got == pytest.approx(best, abs=1e-12)
            assert len({r for r, _ in matches}) == len(matches)
            assert len({c for _, c in matches}) == len(matches)


def oracle_embeddings(n, dim=8):
    out = []
    for i in range(n):
        e = np.zeros(dim)
        e[i % dim] = 1.0
        out.append(e)
    return out


class TestTrackerStep:
    def make_tracker(self, **kw):
        cfg = TrackerConfig(**kw)
        return Tracker(cfg, predictor=None)

    def test_first_frame_births(self):
        tracker = self.make_tracker()
        embs = oracle_embeddings(3)
        dets = [det(20 * i + 10, 30, 0.9, emb=embs[i]) for i in range(3)]
        out = tracker.step(1, dets)
        assert sorted(t.id for t in tracker.tracklets) == [1, 2, 3]
        assert out.events["births"] == [1, 2, 3]
        assert len(out.rows) == 3

    def test_duplicate_frame_rejected(self):
        tracker = self.make_tracker()
        tracker.step(1, [det(10, 10, 0.9, emb=[1, 0])])
        with pytest.raises(ValueError):
            tracker.step(1, [])

    def test_association_by_motion_and_appearance(self):
        tracker = self.make_tracker()
        embs = oracle_embeddings(2)
        tracker.step(1, [det(10, 10, 0.9, emb=embs[0]), det(60, 10, 0.9, emb=embs[1])])
        out = tracker.step(2, [det(62, 11, 0.9, emb=embs[1]), det(12, 11, 0.9, emb=embs[0])])
        matched = dict((tid, idx) for tid, idx in out.events["matches"])
        assert matched[1] == 1  # tracklet 1 started at (10, 10)
        assert matched[2] == 0
        assert out.events["births"] == []

    def test_low_confidence_recovery_no_birth(self):
        tracker = self.make_tracker(high_thresh=0.6, low_iou_gate=0.3)
        embs = oracle_embeddings(1)
        tracker.step(1, [det(10, 10, 0.9, emb=embs[0])])
        out = tracker.step(2, [det(11, 10, 0.2, emb=embs[0])])
        assert out.events["births"] == []
        assert len(tracker.tracklets) == 1
        assert tracker.tracklets[0].last_frame == 2

    def test_unmatched_low_discarded(self):
        tracker = self.make_tracker()
        tracker.step(1, [det(10, 10, 0.9, emb=oracle_embeddings(1)[0])])
        out = tracker.step(2, [det(150, 150, 0.2, emb=oracle_embeddings(1)[0])])
        assert len(tracker.tracklets) == 1
        assert tracker.tracklets[0].last_frame == 1

    def test_low_conf_keeps_embedding(self):
        tracker = self.make_tracker()
        e0 = oracle_embeddings(1)[0]
        tracker.step(1, [det(10, 10, 0.9, emb=e0)])
        other = np.zeros(8)
        other[3] = 1.0
        tracker.step(2, [det(11, 10, 0.2, emb=other)])
        trk = tracker.tracklets[0]
        assert np.array_equal(trk.embeddings[-1], trk.embeddings[0])

    def test_max_age_termination(self):
        tracker = self.make_tracker(max_age=2)
        tracker.step(1, [det(10, 10, 0.9, emb=oracle_embeddings(1)[0])])
        tracker.step(2, [])
        tracker.step(3, [])
        assert len(tracker.tracklets) == 1  # missed twice, still alive
        out = tracker.step(4, [])
        assert tracker.tracklets == []
        assert out.events["deaths"] == [1]

    def test_ids_never_reused(self):
        tracker = self.make_tracker(max_age=0)
        e = oracle_embeddings(1)[0]
        tracker.step(1, [det(10, 10, 0.9, emb=e)])
        tracker.step(2, [])  # dies immediately (max_age 0)
        tracker.step(3, [det(10, 10, 0.9, emb=e)])
        assert tracker.tracklets[0].id == 2

    def test_at_most_one_detection_per_tracklet(self):
        tracker = self.make_tracker()
        e = oracle_embeddings(2)
        tracker.step(1, [det(10, 10, 0.9, emb=e[0]), det(50, 50, 0.9, emb=e[1])])
        out = tracker.step(2, [det(10, 10, 0.9, emb=e[0]), det(11, 11, 0.9, emb=e[0])])
        matched_tracklets = [tid for tid, _ in out.events["matches"]]
        assert len(matched_tracklets) == len(set(matched_tracklets))

    def test_full_history_uses_predictor(self):
        cfg = PredictorConfig(feature_dim=8, heads=2, embed_dim=8, history_len=3, horizon=2)
        predictor = SwarmPredictor(cfg, np.random.default_rng(0))
        tracker = Tracker(TrackerConfig(), predictor)
        e = oracle_embeddings(1)[0]
        for f in range(1, 4):
            tracker.step(f, [det(10.0 * f, 10, 0.9, emb=e)])
        trk = tracker.tracklets[0]
        assert trk.has_full_history(4, 3)
        centers = tracker.predicted_centers(4)
        window_pred = predictor(
            __import__("swarmtrack.predictor", fromlist=["SwarmWindow"]).SwarmWindow.from_positions(
                np.array([[[10.0, 10.0], [20.0, 10.0], [30.0, 10.0]]]),
                np.array([[e, e, e]]),
                [trk.id],
            )
        )
        assert np.allclose(centers[0], window_pred.positions[0, 0])

    def test_event_log_roundtrip(self, tmp_path):
        out1 = FrameOutput(1, rows=[], events={"frame": 1, "matches": [], "births": [1], "deaths": []})
        out2 = FrameOutput(2, rows=[], events={"frame": 2, "matches": [[1, 0]], "births": [], "deaths": []})
        path = tmp_path / "events.jsonl"
        write_event_log(path, [out1, out2])
        lines = path.read_text().strip().split("\n")
        assert json.loads(lines[0])["births"] == [1]
        assert json.loads(lines[1])["matches"] == [[1, 0]]
