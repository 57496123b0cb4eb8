"""Pose side of the pipeline: heatmap fusion/decoding, flow propagation,
three-term temporal smoothing and identity transfer from tracked boxes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .assignment import FORBIDDEN, hungarian
from .domain import BBox, FlowField, Heatmap, Pose, TrackedBox
from .errors import UsageError, ValidationError
from .flow import propagate_points


@dataclass(frozen=True)
class PoseSmoothParams:
    alpha: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 0.5:
            raise ValidationError(f"alpha {self.alpha} must lie in [0, 0.5]")


@dataclass
class PoseSequence:
    track_id: int
    poses: dict = field(default_factory=dict)  # frame -> Pose

    def frames(self) -> list[int]:
        return sorted(self.poses)


def fuse_heatmaps(a: Heatmap, b: Heatmap) -> Heatmap:
    if a.values.shape != b.values.shape:
        raise ValidationError(f"heatmap shapes differ: {a.values.shape} vs {b.values.shape}")
    return Heatmap((a.values + b.values) / 2.0)


_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def decode_heatmap(h: Heatmap, origin=(0.0, 0.0), scale=(1.0, 1.0)) -> Pose:
    """Argmax decode with a quarter-cell shift toward the strongest 4-neighbor.

    The shift is applied only when one neighbor is strictly stronger than the
    others. Grid (col, row) maps to image ``origin + scale * (col, row)``.
    A flat channel decodes to its center with the common value as confidence.
    The returned pose has frame 0; callers set the frame.
    """
    sx, sy = scale
    if sx <= 0 or sy <= 0:
        raise ValidationError("decode scale must be positive")
    H, W = h.height, h.width
    kps = np.empty((h.K, 3))
    for k in range(h.K):
        ch = h.values[k]
        peak = float(ch.max())
        if float(ch.min()) == peak:
            gx, gy, conf = (W - 1) / 2.0, (H - 1) / 2.0, peak
        else:
            row, col = divmod(int(np.argmax(ch)), W)
            gx, gy = float(col), float(row)
            nb = [(float(ch[row + dy, col + dx]), dx, dy) for dx, dy in _NEIGHBORS
                  if 0 <= col + dx < W and 0 <= row + dy < H]
            if nb:
                top = max(v for v, _, _ in nb)
                winners = [(dx, dy) for v, dx, dy in nb if v == top]
                if len(winners) == 1:
                    gx += 0.25 * winners[0][0]
                    gy += 0.25 * winners[0][1]
            conf = peak
        kps[k] = (origin[0] + sx * gx, origin[1] + sy * gy, min(max(conf, 0.0), 1.0))
    return Pose(frame=0, keypoints=kps)


def propagate_pose(p: Pose, f: FlowField) -> Pose:
    return p.with_xy(np.array(propagate_points(p.xy.tolist(), f)))


def smooth_pose(prev: Optional[Pose], next: Optional[Pose], curr: Pose,
                f_prev_to_k: Optional[FlowField], f_next_to_k: Optional[FlowField],
                p: PoseSmoothParams = PoseSmoothParams()) -> Pose:
    """Blend the current pose with its flow-propagated neighbors.

    With both neighbors: ``alpha*prev' + alpha*next' + (1 - 2*alpha)*curr``.
    A missing neighbor hands its weight to the current pose. Confidences,
    frame and track id come from ``curr``.
    """
    terms = []
    for nb, f, name in ((prev, f_prev_to_k, "previous"), (next, f_next_to_k, "next")):
        if nb is None:
            continue
        if nb.K != curr.K:
            raise ValidationError(f"{name} pose has {nb.K} keypoints, current has {curr.K}")
        if nb.track_id is not None and curr.track_id is not None and nb.track_id != curr.track_id:
            raise UsageError(f"{name} pose belongs to track {nb.track_id}, not {curr.track_id}")
        if f is None:
            raise UsageError(f"missing flow field for the {name} neighbor")
        terms.append(propagate_pose(nb, f).xy)
    if p.alpha == 0.0 or not terms:
        return curr
    xy = curr.xy
    out = xy.copy()
    for t in terms:
        out += p.alpha * (t - xy)
    return curr.with_xy(out)


def smooth_sequence(seq: PoseSequence, flows: Mapping[tuple[int, int], FlowField],
                    p: PoseSmoothParams = PoseSmoothParams()) -> PoseSequence:
    """Smooth every pose of one track against its raw (unsmoothed) neighbors.

    ``flows[(a, b)]`` maps frame a onto frame b; both directions are needed
    between consecutive present frames.
    """
    out = PoseSequence(seq.track_id)
    for k in seq.frames():
        prev = seq.poses.get(k - 1)
        nxt = seq.poses.get(k + 1)
        f_prev = flows.get((k - 1, k)) if prev is not None else None
        f_next = flows.get((k + 1, k)) if nxt is not None else None
        out.poses[k] = smooth_pose(prev, nxt, seq.poses[k], f_prev, f_next, p)
    return out


def transfer_ids(tracks: Sequence, poses: Sequence[Pose]) -> list[PoseSequence]:
    """Give each pose the track id of the box it was estimated from.

    ``tracks`` are per-frame results (anything with ``frame`` and ``outputs``);
    each pose names its source box by ``frame`` and ``box_index`` into that
    frame's outputs. Sequences come back ordered by track id.
    """
    boxes: dict[int, list[TrackedBox]] = {}
    for fr in tracks:
        boxes.setdefault(fr.frame, []).extend(fr.outputs)
    seqs: dict[int, PoseSequence] = {}
    for pose in poses:
        frame_boxes = boxes.get(pose.frame, [])
        idx = pose.box_index
        if idx is None or not 0 <= idx < len(frame_boxes):
            raise ValidationError(f"pose in frame {pose.frame} references missing box {idx}")
        tid = frame_boxes[idx].track_id
        seq = seqs.setdefault(tid, PoseSequence(tid))
        if pose.frame in seq.poses:
            raise ValidationError(f"two poses for track {tid} in frame {pose.frame}")
        seq.poses[pose.frame] = pose.replace(track_id=tid)
    return [seqs[t] for t in sorted(seqs)]


def _containment(pose: Pose, box: BBox) -> float:
    lab = pose.keypoints[pose.keypoints[:, 2] > 0] if np.any(pose.keypoints[:, 2] > 0) else pose.keypoints
    x, y = lab[:, 0], lab[:, 1]
    inside = (x >= box.x1) & (x <= box.x2) & (y >= box.y1) & (y <= box.y2)
    return float(inside.mean())


def assign_poses_to_boxes(tracks: Sequence, poses: Sequence[Pose], min_inside: float = 0.5) -> list[Pose]:
    """Attach ``box_index`` to poses that lack one, by keypoint containment.

    Per frame, poses and boxes are paired optimally on the share of keypoints
    falling inside the box (center distance breaks ties). Poses without a
    box are dropped.
    """
    boxes: dict[int, list[TrackedBox]] = {}
    for fr in tracks:
        boxes.setdefault(fr.frame, []).extend(fr.outputs)
    by_frame: dict[int, list[Pose]] = {}
    for pose in poses:
        by_frame.setdefault(pose.frame, []).append(pose)
    out = []
    for frame in sorted(by_frame):
        fposes, fboxes = by_frame[frame], boxes.get(frame, [])
        if not fboxes:
            continue
        cost = np.full((len(fposes), len(fboxes)), FORBIDDEN)
        for i, pose in enumerate(fposes):
            c = pose.xy.mean(axis=0)
            for j, tb in enumerate(fboxes):
                frac = _containment(pose, tb.box)
                if frac >= min_inside:
                    b = tb.box
                    dist = np.hypot(c[0] - (b.x1 + b.x2) / 2, c[1] - (b.y1 + b.y2) / 2)
                    cost[i, j] = (1.0 - frac) + 1e-3 * dist / (b.width + b.height)
        for i, j in hungarian(cost):
            out.append(fposes[i].replace(box_index=j))
    return out
