"""Detection, tracking and pose metrics."""

from .detection import DetEvalParams, detection_ap, miss_rate_curve, mmr, pr_curve
from .keypoints import PoseEvalParams, keypoint_area, oks, pose_ap
from .mot import MotReport, mot_metrics

__all__ = [
    "DetEvalParams",
    "MotReport",
    "PoseEvalParams",
    "detection_ap",
    "keypoint_area",
    "miss_rate_curve",
    "mmr",
    "mot_metrics",
    "oks",
    "pose_ap",
    "pr_curve",
]
