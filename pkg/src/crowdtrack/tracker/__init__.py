from ..assignment import FORBIDDEN, hungarian
from .deepsort import FrameResult, Track, Tracker, TrackerParams, TrackState, flatten, run_tracker
from .gridsearch import GRID_AXES, grid_search
from .kalman import KalmanState, gating_distance, initiate, predict, update
from .reid import combine_flip, combine_scales, cosine_gallery_distance

__all__ = [
    "FORBIDDEN",
    "FrameResult",
    "GRID_AXES",
    "KalmanState",
    "Track",
    "TrackState",
    "Tracker",
    "TrackerParams",
    "combine_flip",
    "combine_scales",
    "cosine_gallery_distance",
    "flatten",
    "gating_distance",
    "grid_search",
    "hungarian",
    "initiate",
    "predict",
    "run_tracker",
    "update",
]
