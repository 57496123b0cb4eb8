"""Detection post-processing: IoU, greedy NMS, Set-NMS, two-model fusion and
flow-guided box smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .domain import BBox, Detection, FlowField, TrackedBox
from .errors import ValidationError
from .flow import propagate_points


@dataclass(frozen=True)
class NmsParams:
    iou_threshold: float = 0.5
    score_floor: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValidationError(f"iou_threshold {self.iou_threshold} not in (0, 1)")
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValidationError(f"score_floor {self.score_floor} not in [0, 1]")


@dataclass(frozen=True)
class FusionParams:
    weight_a: float = 0.5
    weight_b: float = 0.5
    match_iou: float = 0.5

    def __post_init__(self):
        if self.weight_a < 0 or self.weight_b < 0 or abs(self.weight_a + self.weight_b - 1.0) > 1e-9:
            raise ValidationError("fusion weights must be nonnegative and sum to 1")
        if not 0.0 < self.match_iou < 1.0:
            raise ValidationError(f"match_iou {self.match_iou} not in (0, 1)")


@dataclass(frozen=True)
class BoxSmoothParams:
    alpha: float = 0.5
    match_iou: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha {self.alpha} not in [0, 1]")
        if not 0.0 < self.match_iou < 1.0:
            raise ValidationError(f"match_iou {self.match_iou} not in (0, 1)")


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)))
    A = np.array([b.as_array() for b in boxes_a])
    B = np.array([b.as_array() for b in boxes_b])
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _greedy_nms(dets: Sequence[Detection], p: NmsParams,
                skip: Callable[[int, int], bool]) -> list[Detection]:
    order = sorted(
        (i for i, d in enumerate(dets) if d.score >= p.score_floor),
        key=lambda i: (-dets[i].score, i),
    )
    kept: list[int] = []
    for i in order:
        if all(skip(k, i) or iou(dets[k].box, dets[i].box) <= p.iou_threshold for k in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def nms(dets: Sequence[Detection], p: NmsParams = NmsParams()) -> list[Detection]:
    """Greedy NMS in descending score order (ties by input index)."""
    return _greedy_nms(dets, p, lambda k, i: False)


def set_nms(dets: Sequence[Detection], p: NmsParams = NmsParams()) -> list[Detection]:
    """NMS that never lets a box suppress another box from the same proposal.

    A detection without ``proposal_id`` counts as its own unique proposal.
    """
    pid = [d.proposal_id for d in dets]

    def same_proposal(k: int, i: int) -> bool:
        return pid[k] is not None and pid[k] == pid[i]

    return _greedy_nms(dets, p, same_proposal)


def _greedy_pairs(ious: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Greedy one-to-one pairing by descending IoU; ties by (row, col)."""
    cand = [(-ious[i, j], i, j) for i in range(ious.shape[0]) for j in range(ious.shape[1])
            if ious[i, j] >= threshold]
    cand.sort()
    used_r, used_c, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return pairs


def fuse_detections(a: Sequence[Detection], b: Sequence[Detection],
                    p: FusionParams = FusionParams()) -> list[Detection]:
    """Merge the outputs of two detectors run on the same frame.

    Pairs matched by greedy IoU are averaged per corner and per score with
    the configured weights; everything else passes through. Output order is
    merged pairs (in a-order), then unmatched a, then unmatched b.
    """
    pairs = _greedy_pairs(iou_matrix([d.box for d in a], [d.box for d in b]), p.match_iou)
    wa, wb = p.weight_a, p.weight_b
    merged = {}
    for i, j in pairs:
        da, db = a[i], b[j]
        box = BBox(*(wa * u + wb * v for u, v in zip(da.box.as_array(), db.box.as_array())))
        lead = da if da.score >= db.score else db
        merged[i] = lead.replace(box=box, score=min(1.0, wa * da.score + wb * db.score))
    matched_b = {j for _, j in pairs}
    out = [merged[i] for i in sorted(merged)]
    out += [d for i, d in enumerate(a) if i not in merged]
    out += [d for j, d in enumerate(b) if j not in matched_b]
    return out


def _propagate_box(box: BBox, f: FlowField) -> Optional[BBox]:
    (x1, y1), (x2, y2) = propagate_points(box.corners(), f)
    try:
        return BBox(x1, y1, x2, y2)
    except ValidationError:
        return None


def smooth_boxes(prev: Sequence[Union[TrackedBox, Detection]], curr: Sequence[Detection],
                 f: FlowField, p: BoxSmoothParams = BoxSmoothParams()) -> list[Detection]:
    """Blend each current box with its flow-propagated match from the previous frame.

    ``out = alpha * (prev + flow) + (1 - alpha) * curr`` per corner coordinate.
    Matching is greedy on IoU between the propagated previous box and the
    current detection.
    """
    if f.width == 0 or f.height == 0:
        raise ValidationError("flow field is empty")
    if p.alpha == 0.0 or not prev or not curr:
        return list(curr)
    predicted = [_propagate_box(b.box, f) for b in prev]
    live = [i for i, b in enumerate(predicted) if b is not None]
    ious = iou_matrix([d.box for d in curr], [predicted[i] for i in live])
    out = list(curr)
    a = p.alpha
    for ci, li in _greedy_pairs(ious, p.match_iou):
        pred = predicted[live[li]].as_array()
        obs = curr[ci].box.as_array()
        blended = obs + a * (pred - obs)
        try:
            out[ci] = curr[ci].replace(box=BBox(*blended))
        except ValidationError:
            pass
    return out
