"""Immutable value types passed between the pipeline stages.

Boxes use the top-left / bottom-right corner convention in continuous pixel
coordinates. Array-valued fields are stored as read-only numpy arrays so the
objects can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError

EMBEDDING_NORM_TOL = 1e-6


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(f"degenerate box {vals}")

    @classmethod
    def from_tlwh(cls, left: float, top: float, width: float, height: float) -> "BBox":
        if width <= 0 or height <= 0:
            raise ValidationError(f"box width/height must be positive, got {width}x{height}")
        return cls(left, top, left + width, top + height)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def to_xyah(self) -> np.ndarray:
        """Center x, center y, aspect ratio w/h, height."""
        w, h = self.width, self.height
        return np.array([self.x1 + w / 2, self.y1 + h / 2, w / h, h], dtype=np.float64)

    @classmethod
    def from_xyah(cls, xyah) -> "BBox":
        cx, cy, a, h = (float(v) for v in xyah[:4])
        w = a * h
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def corners(self) -> list[tuple[float, float]]:
        return [(self.x1, self.y1), (self.x2, self.y2)]


def _check_score(score: float) -> None:
    if not (0.0 <= score <= 1.0):
        raise ValidationError(f"score {score} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Detection:
    frame: int
    box: BBox
    score: float
    proposal_id: Optional[int] = None
    embedding: Optional[np.ndarray] = None
    model_id: int = 0

    def __post_init__(self):
        if self.frame < 0:
            raise ValidationError(f"negative frame index {self.frame}")
        _check_score(self.score)
        if self.proposal_id is not None and self.proposal_id < 0:
            raise ValidationError(f"negative proposal id {self.proposal_id}")
        if self.embedding is not None:
            emb = _frozen(self.embedding)
            if emb.ndim != 1 or emb.size == 0:
                raise ValidationError("embedding must be a non-empty vector")
            norm = float(np.linalg.norm(emb))
            if abs(norm - 1.0) > EMBEDDING_NORM_TOL:
                raise ValidationError(f"embedding norm {norm} is not 1")
            object.__setattr__(self, "embedding", emb)

    def replace(self, **changes) -> "Detection":
        kw = dict(frame=self.frame, box=self.box, score=self.score, proposal_id=self.proposal_id,
                  embedding=self.embedding, model_id=self.model_id)
        kw.update(changes)
        return Detection(**kw)

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        if (self.frame, self.box, self.score, self.proposal_id, self.model_id) != (
            other.frame, other.box, other.score, other.proposal_id, other.model_id
        ):
            return False
        if self.embedding is None or other.embedding is None:
            return self.embedding is None and other.embedding is None
        return bool(np.array_equal(self.embedding, other.embedding))

    __hash__ = None


@dataclass(frozen=True)
class TrackedBox:
    frame: int
    track_id: int
    box: BBox
    score: float = 1.0

    def __post_init__(self):
        if self.track_id < 1:
            raise ValidationError(f"track id must be >= 1, got {self.track_id}")
        _check_score(self.score)


@dataclass(frozen=True, eq=False)
class Pose:
    """K keypoints as an array of shape (K, 3): x, y, confidence."""

    frame: int
    keypoints: np.ndarray
    track_id: Optional[int] = None
    box_index: Optional[int] = None

    def __post_init__(self):
        kp = _frozen(self.keypoints)
        if kp.ndim != 2 or kp.shape[1] != 3 or kp.shape[0] == 0:
            raise ValidationError(f"keypoints must have shape (K, 3), got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise ValidationError("keypoint values must be finite")
        if np.any(kp[:, 2] < 0) or np.any(kp[:, 2] > 1):
            raise ValidationError("keypoint confidence outside [0, 1]")
        object.__setattr__(self, "keypoints", kp)

    @property
    def K(self) -> int:
        return self.keypoints.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def score(self) -> float:
        return float(self.keypoints[:, 2].mean())

    def with_xy(self, xy) -> "Pose":
        kp = np.array(self.keypoints)
        kp[:, :2] = xy
        return Pose(self.frame, kp, self.track_id, self.box_index)

    def replace(self, **changes) -> "Pose":
        kw = dict(frame=self.frame, keypoints=self.keypoints, track_id=self.track_id,
                  box_index=self.box_index)
        kw.update(changes)
        return Pose(**kw)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (
            (self.frame, self.track_id, self.box_index) == (other.frame, other.track_id, other.box_index)
            and np.array_equal(self.keypoints, other.keypoints)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement field, data shape (height, width, 2) holding (dx, dy).

    Values are kept in float32, the precision of the .flo interchange format.
    """

    data: np.ndarray

    def __post_init__(self):
        d = _frozen(self.data, np.float32)
        if d.ndim != 3 or d.shape[2] != 2:
            raise ValidationError(f"flow data must have shape (H, W, 2), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("flow values must be finite")
        object.__setattr__(self, "data", d)

    @classmethod
    def constant(cls, width: int, height: int, dx: float, dy: float) -> "FlowField":
        d = np.empty((height, width, 2), dtype=np.float32)
        d[..., 0] = dx
        d[..., 1] = dy
        return cls(d)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Per-keypoint confidence grids, values shape (K, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 3 or min(v.shape) <= 0:
            raise ValidationError(f"heatmap must have shape (K, H, W), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ValidationError("heatmap values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Heatmap):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GrayFrame:
    """Grayscale image, pixels shape (height, width), values in [0, 1]."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = _frozen(self.pixels, np.float32)
        if p.ndim != 2 or min(p.shape) <= 0:
            raise ValidationError(f"frame must be 2-D and non-empty, got {p.shape}")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayFrame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and self.pixels.tobytes() == other.pixels.tobytes()

    __hash__ = None
