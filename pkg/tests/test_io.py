import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdtrack import io as cio
from crowdtrack.domain import BBox, Detection, FlowField, GrayFrame, Heatmap, Pose, TrackedBox
from crowdtrack.errors import CrowdTrackError, FormatError, LengthError, ParseError, ValidationError


class TestMot:
    def test_detection_line(self):
        (d,) = cio.parse_mot("1,-1,10,20,30,40,0.9,-1,-1,-1", "detections")
        assert d == Detection(1, BBox(10, 20, 40, 60), 0.9)

    def test_track_line(self):
        (t,) = cio.parse_mot("3,7,0,0,5,5,1.0,-1,-1,-1", "tracks")
        assert t == TrackedBox(3, 7, BBox(0, 0, 5, 5), 1.0)

    def test_zero_width(self):
        with pytest.raises(ValidationError):
            cio.parse_mot("1,-1,10,20,0,40,0.9,-1,-1,-1", "detections")

    def test_bad_field_reports_line(self):
        with pytest.raises(ParseError) as exc:
            cio.parse_mot("1,1,0,0,5,5,1,-1,-1,-1\n2,x,0,0,5,5,1,-1,-1,-1", "tracks")
        assert exc.value.line == 2

    def test_write_empty(self):
        assert cio.write_mot([]) == ""

    def test_write_single(self):
        line = cio.write_mot([TrackedBox(1, 2, BBox(0, 0, 10, 10), 1.0)])
        assert line == "1,2,0.000000,0.000000,10.000000,10.000000,1.000000,-1,-1,-1\n"

    def test_sorted_by_frame_then_id(self):
        text = "2,1,0,0,1,1,1\n1,5,0,0,1,1,1\n1,2,0,0,1,1,1\n"
        assert [(t.frame, t.track_id) for t in cio.parse_mot(text)] == [(1, 2), (1, 5), (2, 1)]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 99),
                              st.floats(-500, 500), st.floats(-500, 500),
                              st.floats(0.01, 300), st.floats(0.01, 300), st.floats(0, 1)),
                    max_size=30))
    def test_round_trip_six_decimals(self, rows):
        items = [TrackedBox(f, i, BBox.from_tlwh(round(l, 6), round(t, 6), round(w, 6), round(h, 6)), round(s, 6))
                 for f, i, l, t, w, h, s in rows]
        back = cio.parse_mot(cio.write_mot(items))
        again = cio.write_mot(back)
        assert again == cio.write_mot(items)
        assert cio.parse_mot(again) == back


class TestFlo:
    def test_one_by_one(self):
        f = FlowField(np.array([[[2.0, -1.0]]], dtype=np.float32))
        data = cio.write_flo(f)
        assert len(data) == 12 + 8
        assert struct.unpack("<f", data[:4])[0] == 202021.25
        assert cio.read_flo(data) == f

    def test_bad_sentinel(self):
        data = struct.pack("<fii", 0.0, 1, 1) + b"\0" * 8
        with pytest.raises(FormatError):
            cio.read_flo(data)

    def test_truncated(self):
        data = cio.write_flo(FlowField.zeros(3, 2))
        with pytest.raises(LengthError):
            cio.read_flo(data[:-1])

    @given(st.binary(max_size=64))
    def test_garbage_only_raises_package_errors(self, blob):
        try:
            cio.read_flo(blob)
        except CrowdTrackError:
            pass

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_round_trip_bit_exact(self, w, h, seed):
        data = np.random.default_rng(seed).normal(0, 50, (h, w, 2)).astype(np.float32)
        blob = cio.write_flo(FlowField(data))
        assert cio.write_flo(cio.read_flo(blob)) == blob


class TestSidecars:
    def test_embeddings_round_trip(self):
        e = np.random.default_rng(0).normal(size=(5, 8)).astype(np.float32)
        blob = cio.write_embeddings(e)
        assert cio.write_embeddings(cio.read_embeddings(blob)) == blob
        np.testing.assert_array_equal(cio.read_embeddings(blob), e)

    def test_embedding_count_mismatch(self):
        dets = [Detection(1, BBox(0, 0, 1, 1), 1.0)]
        with pytest.raises(ValidationError):
            cio.attach_embeddings(dets, np.zeros((2, 4), dtype=np.float32))

    def test_gray_and_heatmap(self):
        g = GrayFrame(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert cio.read_gray(cio.write_gray(g)) == g
        hm = Heatmap(np.linspace(0, 1, 24).reshape(2, 3, 4))
        back = cio.read_heatmap(cio.write_heatmap(hm))
        np.testing.assert_array_equal(back.values, hm.values.astype(np.float32))

    def test_bad_header(self):
        with pytest.raises(FormatError):
            cio.read_embeddings(b"X 1 N 1\n" + b"\0" * 4)


class TestPoseRecords:
    def test_single_record(self):
        (p,) = cio.read_pose_records('{"frame":0,"track_id":1,"keypoints":[[1,2,0.5]]}', K=1)
        assert p == Pose(0, np.array([[1.0, 2.0, 0.5]]), track_id=1)

    def test_mixed_k(self):
        text = ('{"frame":0,"keypoints":[[1,2,1],[3,4,1]]}\n'
                '{"frame":1,"keypoints":[[1,2,1],[3,4,1],[5,6,1]]}\n')
        with pytest.raises(ValidationError):
            cio.read_pose_records(text)

    @pytest.mark.parametrize("line", ['{"frame":0}', '[1,2]', '{"frame":"a","keypoints":[[1,2,1]]}',
                                      '{"frame":0,"keypoints":[[1,2,1]],"extra":1}', '{'])
    def test_malformed(self, line):
        with pytest.raises(ParseError):
            cio.read_pose_records(line)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 5), st.lists(st.tuples(st.integers(0, 100), st.one_of(st.none(), st.integers(1, 50)),
                                                  st.integers(0, 2**32 - 1)), max_size=10))
    def test_round_trip(self, K, specs):
        poses = []
        for frame, tid, seed in specs:
            rng = np.random.default_rng(seed)
            kp = np.column_stack([rng.uniform(-100, 100, (K, 2)), rng.uniform(0, 1, K)]).round(6)
            poses.append(Pose(frame, kp, track_id=tid))
        text = cio.write_pose_records(poses)
        assert cio.read_pose_records(text) == poses


def test_atomic_write(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    cio.atomic_write(target, "hello")
    cio.atomic_write(target, b"bytes")
    assert target.read_bytes() == b"bytes"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]
