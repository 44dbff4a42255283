"""Synthetic scenes: determinism, formation geometry, corruption, export."""

import numpy as np
import pytest

from swarmtrack.motio import check_mot_grammar, read_mot_file
from swarmtrack.simulator import (
    FormationSpec,
    SceneSpec,
    _rotation,
    corrupt_detections,
    export_mot,
    generate_scene,
    oracle_detections,
    render_feature_frame,
)


def square_offsets(scale=18.0):
    return scale * np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def circle_spec(**kw):
    base = dict(
        formation=FormationSpec(
            offsets=square_offsets(),
            trajectory="circle",
            speed=2.0,
            center=(64.0, 64.0),
            radius=30.0,
        ),
        frames=40,
        image_size=128,
        render=False,
    )
    base.update(kw)
    return SceneSpec(**base)


class TestFormationSpec:
    def test_duplicate_offsets_rejected(self):
        with pytest.raises(ValueError):
            FormationSpec(offsets=np.zeros((2, 2)), trajectory="line")

    def test_unknown_trajectory(self):
        with pytest.raises(ValueError):
            FormationSpec(offsets=square_offsets(), trajectory="zigzag")

    def test_transition_requires_targets(self):
        with pytest.raises(ValueError):
            FormationSpec(offsets=square_offsets(), trajectory="formation-transition")


class TestGenerate:
    def test_circle_center_at_phase_zero(self):
        scene = generate_scene(circle_spec(), seed=3)
        assert np.allclose(scene.centers[0], [64.0 + 30.0, 64.0])

    def test_line_constant_displacement(self):
        spec = circle_spec(frames=20)
        spec.formation.trajectory = "line"
        spec.formation.heading = 0.3
        spec.formation.speed = 1.0  # stays inside the frame: no box clamping
        scene = generate_scene(spec, seed=4)
        pos = np.array([[o.box[:2] for o in fr] for fr in scene.gt])
        steps = np.diff(pos, axis=0)
        assert np.allclose(steps, steps[0], atol=1e-9)

    def test_seed_determinism_byte_identical(self, tmp_path):
        spec = circle_spec(render=True, p_miss=0.1, p_false=0.4, box_jitter=0.4)
        export_mot(generate_scene(spec, seed=9), tmp_path / "a")
        export_mot(generate_scene(spec, seed=9), tmp_path / "b")
        assert (tmp_path / "a/gt.txt").read_bytes() == (tmp_path / "b/gt.txt").read_bytes()
        assert (tmp_path / "a/det.txt").read_bytes() == (tmp_path / "b/det.txt").read_bytes()
        assert (tmp_path / "a/pyramids.blob").read_bytes() == (tmp_path / "b/pyramids.blob").read_bytes()

    def test_formation_rigidity(self):
        scene = generate_scene(circle_spec(frames=60), seed=5)
        pos = np.array([[o.box[:2] for o in fr] for fr in scene.gt])
        for i in range(4):
            for j in range(i + 1, 4):
                dist = np.linalg.norm(pos[:, i] - pos[:, j], axis=1)
                assert np.abs(dist - dist[0]).max() < 1e-9

    def test_velocity_coupling_decomposition(self):
        scene = generate_scene(circle_spec(frames=30), seed=6)
        pos = np.array([[o.box[:2] for o in fr] for fr in scene.gt])
        for t in range(1, 30):
            vel = pos[t] - pos[t - 1]
            d_center = scene.centers[t] - scene.centers[t - 1]
            d_rot = _rotation(scene.angles[t]) - _rotation(scene.angles[t - 1])
            expected = d_center + scene.frame_offsets[t] @ d_rot.T
            assert np.abs(vel - expected).max() < 1e-9

    def test_formation_transition_interpolates(self):
        start = square_offsets(20.0)
        end = start[::-1].copy()
        spec = circle_spec()
        spec.formation = FormationSpec(
            offsets=start,
            trajectory="formation-transition",
            speed=0.0,
            center=(64.0, 64.0),
            offsets_end=end,
            transition=(10, 30),
        )
        scene = generate_scene(spec, seed=7)
        assert np.allclose(scene.frame_offsets[5], start)
        assert np.allclose(scene.frame_offsets[35], end)
        assert np.allclose(scene.frame_offsets[20], 0.5 * (start + end))

    def test_heading_embedded_in_appearance(self):
        scene = generate_scene(circle_spec(), seed=8)
        obj = scene.gt[5][0]
        heading_part = obj.appearance[-2:]
        assert np.linalg.norm(heading_part) == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(heading_part, obj.heading)


class TestRender:
    def test_single_uav_argmax_at_cell(self):
        spec = circle_spec(render=True, background_noise=0.0)
        scene = generate_scene(spec, seed=9)
        obj = scene.gt[0][0]
        rng = np.random.default_rng(0)
        pyr = render_feature_frame([obj], [], spec, rng)
        lv = pyr.levels[0]
        energy = np.linalg.norm(lv.grid, axis=2)
        row, col = np.unravel_index(energy.argmax(), energy.shape)
        # the argmax cell is the one whose sampling point is nearest the UAV
        assert abs((col + 0.5) - obj.box[0] / lv.stride) <= 0.5 + 1e-9
        assert abs((row + 0.5) - obj.box[1] / lv.stride) <= 0.5 + 1e-9

    def test_no_uavs_no_noise_zero_grids(self):
        spec = circle_spec(render=True, background_noise=0.0)
        rng = np.random.default_rng(0)
        pyr = render_feature_frame([], [], spec, rng)
        for lv in pyr.levels:
            assert np.array_equal(lv.grid, np.zeros_like(lv.grid))

    def test_signature_linearity(self):
        spec = circle_spec(render=True, background_noise=0.0)
        scene = generate_scene(spec, seed=10)
        obj = scene.gt[0][0]
        rng = np.random.default_rng(0)
        single = render_feature_frame([obj], [], spec, rng)
        doubled_obj = type(obj)(obj.id, obj.box, 2.0 * obj.appearance, obj.heading)
        rng = np.random.default_rng(0)
        double = render_feature_frame([doubled_obj], [], spec, rng)
        assert np.allclose(double.levels[0].grid, 2.0 * single.levels[0].grid, atol=1e-12)

    def test_missed_uav_not_rendered(self):
        spec = circle_spec(render=True, background_noise=0.0, p_miss=0.35)
        scene = generate_scene(spec, seed=11)
        frame = next(t for t in range(scene.frames) if scene.missed[t])
        missed_id = scene.missed[frame][0]
        obj = next(o for o in scene.gt[frame] if o.id == missed_id)
        lv = scene.pyramids[frame].levels[0]
        col = int(obj.box[0] // lv.stride)
        row = int(obj.box[1] // lv.stride)
        assert np.linalg.norm(lv.grid[row, col]) < 0.2  # background noise only


class TestCorruption:
    def test_no_corruption_identity(self):
        spec = circle_spec(p_miss=0.0, p_false=0.0, box_jitter=0.0)
        scene = generate_scene(spec, seed=12)
        for t in range(scene.frames):
            assert len(scene.detections[t]) == len(scene.gt[t])
            for d, o in zip(scene.detections[t], scene.gt[t]):
                assert np.array_equal(d.box, o.box)

    def test_all_missed(self):
        spec = circle_spec(p_miss=1.0)
        scene = generate_scene(spec, seed=13)
        assert all(len(d) == 0 for d in scene.detections)

    def test_miss_rate_monte_carlo(self):
        spec = circle_spec(p_miss=0.1)
        scene = generate_scene(spec, seed=14)
        rng = np.random.default_rng(0)
        total = missed = 0
        for _ in range(10000 // 4):
            _, miss, _ = corrupt_detections(scene.gt[0], spec, rng)
            total += len(scene.gt[0])
            missed += len(miss)
        assert abs(missed / total - 0.1) < 0.01

    def test_false_positive_rate(self):
        spec = circle_spec(p_false=0.5)
        scene = generate_scene(spec, seed=15)
        rng = np.random.default_rng(1)
        count = 0
        trials = 4000
        for _ in range(trials):
            dets, _, false_events = corrupt_detections(scene.gt[0], spec, rng)
            count += len(false_events)
        assert count / trials == pytest.approx(0.5, abs=0.05)

    def test_scores_in_range(self):
        spec = circle_spec(p_false=1.0, box_jitter=1.0)
        scene = generate_scene(spec, seed=16)
        for dets in scene.detections:
            for d in dets:
                assert 0.0 <= d.score <= 1.0
                assert d.box[2] > 0 and d.box[3] > 0


class TestExport:
    def test_row_format(self, tmp_path):
        spec = SceneSpec(
            formation=FormationSpec(
                offsets=np.array([[0.0, 0.0]]),
                trajectory="line",
                speed=0.0,
                center=(12.5, 22.5),
            ),
            frames=1,
            image_size=64,
            box_size_range=(5.0, 5.0),
            render=False,
        )
        scene = generate_scene(spec, seed=17)
        paths = export_mot(scene, tmp_path)
        line = (tmp_path / "gt.txt").read_text().strip()
        assert line == "1,1,10.0,20.0,5.0,5.0,1.0,-1,-1,-1"

    def test_grammar_and_roundtrip(self, tmp_path):
        spec = circle_spec(render=False, p_miss=0.2, p_false=0.5, box_jitter=0.3)
        scene = generate_scene(spec, seed=18)
        paths = export_mot(scene, tmp_path)
        assert check_mot_grammar(paths["gt"]) == sum(len(f) for f in scene.gt)
        assert check_mot_grammar(paths["det"]) == sum(len(d) for d in scene.detections)
        gt = read_mot_file(paths["gt"])
        for t in range(scene.frames):
            rows = gt[t + 1]
            assert len(rows) == len(scene.gt[t])
            for (tid, box, conf), obj in zip(rows, sorted(scene.gt[t], key=lambda o: o.id)):
                assert tid == obj.id
                assert np.allclose(box, obj.box, atol=1e-6)

    def test_empty_frame_emits_no_rows(self, tmp_path):
        spec = circle_spec(p_miss=1.0, render=False)
        scene = generate_scene(spec, seed=19)
        paths = export_mot(scene, tmp_path)
        assert (tmp_path / "det.txt").read_text() == ""


class TestOracleDetections:
    def test_unit_embeddings_and_exact_boxes(self):
        scene = generate_scene(circle_spec(), seed=20)
        dets = oracle_detections(scene, 3)
        assert len(dets) == len(scene.gt[3])
        for d, o in zip(dets, scene.gt[3]):
            assert np.array_equal(d.box, o.box)
            assert np.linalg.norm(d.embedding) == pytest.approx(1.0, abs=1e-12)
