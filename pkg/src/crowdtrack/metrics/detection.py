"""Detection metrics: all-point interpolated AP and log-average miss rate (MMR)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..detpost import iou
from ..domain import Detection, TrackedBox
from ..errors import ValidationError

MISS_RATE_FLOOR = 1e-5


def _default_fppi() -> tuple:
    return tuple(float(v) for v in np.logspace(-2.0, 2.0, 9))


@dataclass(frozen=True)
class DetEvalParams:
    iou_threshold: float = 0.5
    fppi_points: tuple = field(default_factory=_default_fppi)

    def __post_init__(self):
        pts = tuple(float(v) for v in self.fppi_points)
        if not pts or any(v <= 0 for v in pts) or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError("fppi_points must be positive and strictly increasing")
        object.__setattr__(self, "fppi_points", pts)


def greedy_match(gt: Sequence, preds: Sequence, similarity: Callable, threshold: float,
                 score: Callable = lambda p: p.score):
    """Match predictions to ground truth greedily in descending score order.

    Predictions are visited by score (ties by frame, then input index); each
    takes the most similar still-unmatched ground truth in its frame if the
    similarity reaches ``threshold``. Returns ``(order, matched_gt)`` where
    ``matched_gt[k]`` is the gt index claimed by ``preds[order[k]]`` or None.
    """
    gt_by_frame: dict[int, list[int]] = {}
    for gi, g in enumerate(gt):
        gt_by_frame.setdefault(g.frame, []).append(gi)
    order = sorted(range(len(preds)), key=lambda i: (-score(preds[i]), preds[i].frame, i))
    taken = set()
    matched = []
    for pi in order:
        best, best_sim = None, -math.inf
        for gi in gt_by_frame.get(preds[pi].frame, ()):
            if gi in taken:
                continue
            s = similarity(gt[gi], preds[pi])
            if s >= threshold and s > best_sim:
                best, best_sim = gi, s
        if best is not None:
            taken.add(best)
        matched.append(best)
    return order, matched


def _box_iou(g, p) -> float:
    return iou(g.box, p.box)


def average_precision(tp: Sequence[float], fp: Sequence[float], total: float) -> float:
    """Area under the precision envelope for ranked TP/FP weights."""
    if total <= 0:
        raise ValidationError("average precision is undefined without ground truth")
    if len(tp) != len(fp):
        raise ValidationError(f"{len(tp)} TP weights but {len(fp)} FP weights")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(np.asarray(tp, dtype=np.float64))
    cfp = np.cumsum(np.asarray(fp, dtype=np.float64))
    recall = ctp / total
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).tiny)
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def pr_curve(gt: Sequence[TrackedBox], preds: Sequence[Detection],
             p: DetEvalParams = DetEvalParams()) -> list[tuple[float, float, float]]:
    """(score, recall, precision) after each ranked prediction."""
    if not gt:
        raise ValidationError("ground truth is empty")
    order, matched = greedy_match(gt, preds, _box_iou, p.iou_threshold)
    out, tp = [], 0
    for k, (pi, m) in enumerate(zip(order, matched), start=1):
        tp += m is not None
        out.append((preds[pi].score, tp / len(gt), tp / k))
    return out


def detection_ap(gt: Sequence[TrackedBox], preds: Sequence[Detection],
                 p: DetEvalParams = DetEvalParams()) -> float:
    if not gt:
        raise ValidationError("ground truth is empty")
    _, matched = greedy_match(gt, preds, _box_iou, p.iou_threshold)
    tp = [1.0 if m is not None else 0.0 for m in matched]
    return average_precision(tp, [1.0 - t for t in tp], len(gt))


def _frame_count(gt, preds, n_frames: Optional[int]) -> int:
    if n_frames is not None:
        if n_frames <= 0:
            raise ValidationError("n_frames must be positive")
        return n_frames
    return len({g.frame for g in gt} | {d.frame for d in preds})


def miss_rate_curve(gt: Sequence[TrackedBox], preds: Sequence[Detection],
                    p: DetEvalParams = DetEvalParams(),
                    n_frames: Optional[int] = None) -> list[tuple[float, float]]:
    """(FPPI, miss rate) for every score cut, starting with the empty cut.

    ``n_frames`` defaults to the number of distinct frames seen in either input.
    """
    if not gt:
        raise ValidationError("ground truth is empty")
    frames = _frame_count(gt, preds, n_frames)
    _, matched = greedy_match(gt, preds, _box_iou, p.iou_threshold)
    curve = [(0.0, 1.0)]
    tp = fp = 0
    for m in matched:
        if m is None:
            fp += 1
        else:
            tp += 1
        curve.append((fp / frames, (len(gt) - tp) / len(gt)))
    return curve


def mmr(gt: Sequence[TrackedBox], preds: Sequence[Detection],
        p: DetEvalParams = DetEvalParams(), n_frames: Optional[int] = None) -> float:
    """Log-average miss rate over the reference FPPI points, in percent."""
    curve = miss_rate_curve(gt, preds, p, n_frames)
    logs = []
    for ref in p.fppi_points:
        reached = [miss for fppi, miss in curve if fppi <= ref]
        miss = min(reached) if reached else 1.0
        logs.append(math.log(max(miss, MISS_RATE_FLOOR)))
    return 100.0 * math.exp(sum(logs) / len(logs))
