import numpy as np
import pytest

from crowdtrack.domain import BBox
from crowdtrack.errors import ValidationError
from crowdtrack.flow import estimate_flow
from crowdtrack.metrics import mot_metrics
from crowdtrack.synth import NoiseParams, ScenarioParams, corrupt, generate, write_scenario


class TestGenerate:
    def test_static_agent(self):
        sc = generate(ScenarioParams(n_agents=1, speed_range=(0, 0), n_frames=5))
        boxes = [g.box for g in sc.gt_tracks()]
        assert all(b == boxes[0] for b in boxes)
        assert np.all(sc.flow(1, 5).data == 0)

    def test_self_evaluation(self):
        sc = generate(ScenarioParams(n_agents=2, n_frames=10))
        assert mot_metrics(sc.gt_tracks(), sc.gt_tracks()).mota == 100.0

    def test_orthogonal_embeddings(self):
        E = generate(ScenarioParams(n_agents=6, embedding_dim=8)).embeddings
        np.testing.assert_allclose(E @ E.T, np.eye(6), atol=1e-12)

    def test_too_many_agents(self):
        with pytest.raises(ValidationError):
            generate(ScenarioParams(n_agents=5, embedding_dim=4, arena=(256, 400)))

    def test_deterministic(self):
        a, b = generate(ScenarioParams(seed=9)), generate(ScenarioParams(seed=9))
        assert a.gt_tracks() == b.gt_tracks()
        assert a.frame(3) == b.frame(3)

    def test_lanes_do_not_overlap(self):
        sc = generate(ScenarioParams(n_agents=6, n_frames=60, arena=(320, 300), seed=2))
        for k in sc.frames:
            boxes = [a.box(k - 1) for a in sc.agents]
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert boxes[i].y2 <= boxes[j].y1 or boxes[j].y2 <= boxes[i].y1

    def test_flow_moves_keypoints_exactly(self):
        sc = generate(ScenarioParams(n_agents=3, n_frames=12, seed=5))
        from crowdtrack.pose import propagate_pose
        for a in sc.agents:
            for k in (1, 6, 11):
                moved = propagate_pose(sc.gt_pose(a, k), sc.flow(k, k + 1))
                np.testing.assert_array_equal(moved.xy, sc.gt_pose(a, k + 1).xy)
                back = propagate_pose(sc.gt_pose(a, k + 1), sc.flow(k + 1, k))
                np.testing.assert_array_equal(back.xy, sc.gt_pose(a, k).xy)

    def test_block_matching_recovers_agent_motion(self):
        sc = generate(ScenarioParams(n_agents=2, n_frames=4, seed=1, velocity_quantum=1.0, speed_range=(1, 3)))
        f = estimate_flow(sc.frame(1), sc.frame(2))
        m = 2 + 3
        for a in sc.agents:
            v = a.positions[1] - a.positions[0]
            x0, y0 = (int(np.floor(c)) for c in a.positions[0])
            w, h = (int(s) for s in a.size)
            if w <= 2 * m or h <= 2 * m:
                continue
            patch = f.data[y0 + m:y0 + h - m, x0 + m:x0 + w - m]
            assert np.all(patch[..., 0] == v[0]) and np.all(patch[..., 1] == v[1])


class TestCorrupt:
    sc = generate(ScenarioParams(n_agents=3, n_frames=15, seed=3))

    def test_noise_free_equals_gt(self):
        dets, poses = corrupt(self.sc)
        assert [(d.frame, d.box) for d in dets] == [(g.frame, g.box) for g in self.sc.gt_tracks()]
        assert all(d.score == 1.0 for d in dets)
        assert len(poses) == len(dets)

    def test_drop_all(self):
        dets, poses = corrupt(self.sc, NoiseParams(drop_rate=1.0))
        assert dets == [] and poses == []

    def test_deterministic(self):
        n = NoiseParams(drop_rate=0.2, jitter_std=1.0, fp_rate=0.5, embedding_noise_std=0.1)
        assert corrupt(self.sc, n, 7) == corrupt(self.sc, n, 7)

    def test_occlusion_gap(self):
        dets, _ = corrupt(self.sc, NoiseParams(occlusion_gaps=((1, 5, 3),)))
        gt1 = {g.frame: g.box for g in self.sc.gt_tracks() if g.track_id == 2}
        seen = {d.frame for d in dets if d.box == gt1[d.frame]}
        assert seen == set(range(1, 16)) - {5, 6, 7}

    def test_false_positives_avoid_gt(self):
        dets, _ = corrupt(self.sc, NoiseParams(fp_rate=3.0), 1)
        fps = [d for d in dets if d.score < 1.0]
        assert fps and all(0.1 <= d.score <= 0.6 for d in fps)


def test_write_scenario(tmp_path):
    sc = generate(ScenarioParams(n_agents=2, n_frames=3))
    manifest = write_scenario(tmp_path, sc)
    for name in ("gt.txt", "det.txt", "emb.bin", "poses.jsonl", "gt_poses.jsonl", "manifest.json",
                 "flows/1_2.flo", "flows/3_2.flo", "frames/000001.gray"):
        assert (tmp_path / name).is_file()
    assert manifest["frames"] == [1, 3]
