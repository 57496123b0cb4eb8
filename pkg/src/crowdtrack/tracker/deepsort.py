"""DeepSORT-style online tracker: appearance cascade, IoU fallback, track lifecycle."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..detpost import iou_matrix
from ..domain import Detection, TrackedBox
from ..errors import UsageError, ValidationError
from . import kalman
from ..assignment import FORBIDDEN, hungarian
from .reid import cosine_distance_matrix


@dataclass(frozen=True)
class TrackerParams:
    max_cos_dis: float = 0.3
    nn_budget: int = 256
    max_age: int = 30
    n_init: int = 3
    max_iou_dis: float = 0.7
    gating_threshold: float = kalman.CHI2INV95_4DOF

    def __post_init__(self):
        if not 0.0 < self.max_cos_dis <= 1.0:
            raise ValidationError(f"max_cos_dis {self.max_cos_dis} not in (0, 1]")
        if not 0.0 < self.max_iou_dis <= 1.0:
            raise ValidationError(f"max_iou_dis {self.max_iou_dis} not in (0, 1]")
        for name in ("nn_budget", "max_age", "n_init"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if not self.gating_threshold > 0:
            raise ValidationError("gating_threshold must be positive")

    @classmethod
    def from_text(cls, text: str) -> "TrackerParams":
        """Parse flat ``key = value`` lines; '#' starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValidationError(f"line {lineno}: unknown tracker key {key!r}")
            try:
                kw[key] = int(val) if types[key] in (int, "int") else float(val)
            except ValueError:
                raise ValidationError(f"line {lineno}: bad value {val!r} for {key}") from None
        return cls(**kw)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrackerParams":
        return cls.from_text(Path(path).read_text())


class TrackState(enum.Enum):
    TENTATIVE = 1
    CONFIRMED = 2
    DELETED = 3


@dataclass
class Track:
    track_id: int
    kf: kalman.KalmanState
    gallery: deque
    hits: int = 1
    time_since_update: int = 0
    state: TrackState = TrackState.TENTATIVE
    score: float = 1.0

    @property
    def is_confirmed(self) -> bool:
        return self.state is TrackState.CONFIRMED

    def gallery_array(self) -> np.ndarray:
        return np.asarray(self.gallery)


@dataclass
class FrameResult:
    frame: int
    outputs: list = field(default_factory=list)


class Tracker:
    """Stateful association engine; feed frames in strictly increasing order."""

    def __init__(self, params: TrackerParams = TrackerParams()):
        self.params = params
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame: Optional[int] = None
        self._dim: Optional[int] = None

    # -- association helpers -------------------------------------------------

    def _appearance_cost(self, tracks: Sequence[Track], dets: Sequence[Detection]) -> np.ndarray:
        p = self.params
        emb = np.array([d.embedding for d in dets])
        cost = cosine_distance_matrix([t.gallery_array() for t in tracks], emb)
        boxes = [d.box for d in dets]
        for r, t in enumerate(tracks):
            gate = kalman.gating_distances(t.kf, boxes)
            cost[r, gate > p.gating_threshold] = FORBIDDEN
        cost[cost > p.max_cos_dis] = FORBIDDEN
        return cost

    def _iou_cost(self, tracks: Sequence[Track], dets: Sequence[Detection]) -> np.ndarray:
        cost = np.full((len(tracks), len(dets)), FORBIDDEN)
        live, boxes = [], []
        for r, t in enumerate(tracks):
            try:
                boxes.append(t.kf.to_bbox())
            except ValidationError:
                continue  # predicted box collapsed; track can only be re-found by appearance
            live.append(r)
        if live:
            cost[live] = 1.0 - iou_matrix(boxes, [d.box for d in dets])
        cost[cost > self.params.max_iou_dis] = FORBIDDEN
        return cost

    def _match(self, dets: Sequence[Detection]):
        p = self.params
        unmatched = list(range(len(dets)))
        matches: list[tuple[int, int]] = []
        confirmed = [i for i, t in enumerate(self.tracks) if t.is_confirmed]
        for level in range(p.max_age + 1):
            if not unmatched:
                break
            group = [i for i in confirmed if self.tracks[i].time_since_update == level]
            if not group:
                continue
            sub = [dets[j] for j in unmatched]
            cost = self._appearance_cost([self.tracks[i] for i in group], sub)
            pairs = hungarian(cost)
            matches += [(group[r], unmatched[c]) for r, c in pairs]
            taken = {unmatched[c] for _, c in pairs}
            unmatched = [j for j in unmatched if j not in taken]

        matched_tracks = {t for t, _ in matches}
        rest = [i for i in range(len(self.tracks)) if i not in matched_tracks]
        if rest and unmatched:
            cost = self._iou_cost([self.tracks[i] for i in rest], [dets[j] for j in unmatched])
            pairs = hungarian(cost)
            matches += [(rest[r], unmatched[c]) for r, c in pairs]
            taken = {unmatched[c] for _, c in pairs}
            unmatched = [j for j in unmatched if j not in taken]
        return matches, unmatched

    # -- public API ------------------------------------------------------------

    def step(self, dets: Sequence[Detection], frame: int) -> FrameResult:
        p = self.params
        if self._last_frame is not None and frame <= self._last_frame:
            raise UsageError(f"frame {frame} does not follow frame {self._last_frame}")
        for d in dets:
            if d.embedding is None:
                raise UsageError("every detection needs an appearance embedding")
            if self._dim is None:
                self._dim = d.embedding.shape[0]
            elif d.embedding.shape[0] != self._dim:
                raise UsageError(f"embedding dimension {d.embedding.shape[0]} != {self._dim}")
        self._last_frame = frame

        for t in self.tracks:
            t.kf = kalman.predict(t.kf)

        matches, unmatched = self._match(dets)

        updated: list[Track] = []
        matched_idx = set()
        for ti, di in matches:
            t, d = self.tracks[ti], dets[di]
            t.kf = kalman.update(t.kf, d.box)
            t.gallery.append(d.embedding)
            t.hits += 1
            t.time_since_update = 0
            t.score = d.score
            if t.state is TrackState.TENTATIVE and t.hits >= p.n_init:
                t.state = TrackState.CONFIRMED
            matched_idx.add(ti)
            updated.append(t)

        for ti, t in enumerate(self.tracks):
            if ti in matched_idx:
                continue
            t.time_since_update += 1
            if t.state is TrackState.TENTATIVE or t.time_since_update > p.max_age:
                t.state = TrackState.DELETED

        for di in unmatched:
            d = dets[di]
            t = Track(
                track_id=self._next_id,
                kf=kalman.initiate(d.box),
                gallery=deque([d.embedding], maxlen=p.nn_budget),
                score=d.score,
            )
            if t.hits >= p.n_init:
                t.state = TrackState.CONFIRMED
            self._next_id += 1
            self.tracks.append(t)
            updated.append(t)

        self.tracks = [t for t in self.tracks if t.state is not TrackState.DELETED]

        outputs = [
            TrackedBox(frame=frame, track_id=t.track_id, box=t.kf.to_bbox(), score=t.score)
            for t in updated if t.is_confirmed
        ]
        outputs.sort(key=lambda b: b.track_id)
        return FrameResult(frame=frame, outputs=outputs)


def run_tracker(dets: Sequence[Detection], params: TrackerParams = TrackerParams(),
                frames: Optional[Sequence[int]] = None) -> list[FrameResult]:
    """Track a whole sequence.

    Every frame between the first and last detection is stepped, plus any
    extra ``frames`` given, so tracks age through empty frames.
    """
    by_frame: dict[int, list[Detection]] = {}
    for d in dets:
        by_frame.setdefault(d.frame, []).append(d)
    span = set(range(min(by_frame), max(by_frame) + 1)) if by_frame else set()
    all_frames = sorted(span | set(frames or ()))
    tracker = Tracker(params)
    return [tracker.step(by_frame.get(f, []), f) for f in all_frames]


def flatten(results: Sequence[FrameResult]) -> list[TrackedBox]:
    return [b for r in results for b in r.outputs]
