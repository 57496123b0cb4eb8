"""Object keypoint similarity and OKS-thresholded pose AP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..domain import Pose
from ..errors import ValidationError
from .detection import average_precision, greedy_match

DEFAULT_SIGMA = 0.1


def _default_thresholds() -> tuple:
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class PoseEvalParams:
    K: int
    sigmas: tuple = ()
    thresholds: tuple = field(default_factory=_default_thresholds)

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be positive")
        sig = tuple(float(s) for s in self.sigmas) or (DEFAULT_SIGMA,) * self.K
        if len(sig) != self.K or any(s <= 0 for s in sig):
            raise ValidationError(f"need {self.K} positive sigmas")
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(not 0.0 < t < 1.0 for t in th):
            raise ValidationError("OKS thresholds must lie in (0, 1)")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "thresholds", th)


def keypoint_area(p: Pose) -> float:
    """Area of the bounding box of the labeled (conf > 0) keypoints."""
    lab = p.keypoints[p.keypoints[:, 2] > 0]
    if len(lab) == 0:
        return 0.0
    span = lab[:, :2].max(axis=0) - lab[:, :2].min(axis=0)
    return float(span[0] * span[1])


def oks(gt: Pose, pred: Pose, scale_area: float, p: PoseEvalParams) -> float:
    if gt.K != p.K or pred.K != p.K:
        raise ValidationError(f"keypoint count mismatch: gt {gt.K}, pred {pred.K}, params {p.K}")
    if not scale_area > 0:
        raise ValidationError(f"scale_area must be positive, got {scale_area}")
    labeled = gt.keypoints[:, 2] > 0
    if not labeled.any():
        raise ValidationError("ground-truth pose has no labeled keypoints")
    d2 = np.sum((gt.xy - pred.xy) ** 2, axis=1)
    sig2 = np.square(np.asarray(p.sigmas))
    with np.errstate(over="ignore"):
        e = np.exp(-d2 / (2.0 * scale_area * sig2))
    return float(e[labeled].mean())


def pose_ap_at(gt: Sequence[Pose], preds: Sequence[Pose], threshold: float, p: PoseEvalParams,
               gt_weights: Optional[Sequence[float]] = None) -> float:
    """AP in [0, 1] at one OKS threshold; ``gt_weights`` weight each GT's recall share."""
    if not gt:
        raise ValidationError("ground truth is empty")
    areas = [keypoint_area(g) for g in gt]
    for g, a in zip(gt, areas):
        if a <= 0:
            raise ValidationError(f"ground-truth pose in frame {g.frame} has zero keypoint area")
    index = {id(g): k for k, g in enumerate(gt)}
    w = np.ones(len(gt)) if gt_weights is None else np.asarray(gt_weights, dtype=np.float64)
    if w.shape != (len(gt),) or np.any(w < 0):
        raise ValidationError("need one nonnegative weight per ground-truth pose")

    def sim(g, pr):
        return oks(g, pr, areas[index[id(g)]], p)

    _, matched = greedy_match(gt, preds, sim, threshold)
    tp = [w[m] if m is not None else 0.0 for m in matched]
    fp = [0.0 if m is not None else 1.0 for m in matched]
    return average_precision(tp, fp, float(w.sum()))


def pose_ap(gt: Sequence[Pose], preds: Sequence[Pose], p: PoseEvalParams,
            gt_weights: Optional[Sequence[float]] = None) -> tuple[float, float, float]:
    """(AP averaged over thresholds, AP@0.50, AP@0.75), all in percent."""
    cache = {}

    def at(t):
        if t not in cache:
            cache[t] = 100.0 * pose_ap_at(gt, preds, t, p, gt_weights)
        return cache[t]

    avg = float(np.mean([at(t) for t in p.thresholds]))
    return avg, at(0.5), at(0.75)
