"""Crowd tracking-by-detection and temporal pose smoothing toolkit."""

from .domain import BBox, Detection, FlowField, GrayFrame, Heatmap, Pose, TrackedBox
from .errors import (CrowdTrackError, FormatError, LengthError, NumericalError, ParseError, UsageError,
                     ValidationError)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CrowdTrackError",
    "Detection",
    "FlowField",
    "FormatError",
    "GrayFrame",
    "Heatmap",
    "LengthError",
    "NumericalError",
    "ParseError",
    "Pose",
    "TrackedBox",
    "UsageError",
    "ValidationError",
]
