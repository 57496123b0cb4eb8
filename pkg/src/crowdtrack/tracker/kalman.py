"""Constant-velocity Kalman filter over (cx, cy, a, h) box measurements.

State is the 8-vector (cx, cy, a, h, vcx, vcy, va, vh). Noise scales with
box height, following the usual DeepSORT parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..domain import BBox
from ..errors import NumericalError

STD_WEIGHT_POSITION = 1.0 / 20
STD_WEIGHT_VELOCITY = 1.0 / 160
ASPECT_STD = 1e-2
ASPECT_VEL_STD = 1e-5
ASPECT_MEAS_STD = 1e-1

NDIM = 4
MOTION = np.eye(2 * NDIM)
MOTION[:NDIM, NDIM:] = np.eye(NDIM)
PROJECTION = np.eye(NDIM, 2 * NDIM)

# 0.95 quantile of the chi-square distribution with 4 degrees of freedom
CHI2INV95_4DOF = 9.4877


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=np.float64)
        c = np.array(self.cov, dtype=np.float64)
        if m.shape != (8,) or c.shape != (8, 8):
            raise ValueError("Kalman state needs an 8-vector mean and an 8x8 covariance")
        m.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    def to_bbox(self) -> BBox:
        return BBox.from_xyah(self.mean[:4])


def _process_noise(h: float) -> np.ndarray:
    std = [
        STD_WEIGHT_POSITION * h, STD_WEIGHT_POSITION * h, ASPECT_STD, STD_WEIGHT_POSITION * h,
        STD_WEIGHT_VELOCITY * h, STD_WEIGHT_VELOCITY * h, ASPECT_VEL_STD, STD_WEIGHT_VELOCITY * h,
    ]
    return np.diag(np.square(std))


def _measurement_noise(h: float) -> np.ndarray:
    std = [STD_WEIGHT_POSITION * h, STD_WEIGHT_POSITION * h, ASPECT_MEAS_STD, STD_WEIGHT_POSITION * h]
    return np.diag(np.square(std))


def initiate(box: BBox) -> KalmanState:
    z = box.to_xyah()
    h = z[3]
    mean = np.concatenate([z, np.zeros(NDIM)])
    std = [
        2 * STD_WEIGHT_POSITION * h, 2 * STD_WEIGHT_POSITION * h, ASPECT_STD, 2 * STD_WEIGHT_POSITION * h,
        10 * STD_WEIGHT_VELOCITY * h, 10 * STD_WEIGHT_VELOCITY * h, ASPECT_VEL_STD, 10 * STD_WEIGHT_VELOCITY * h,
    ]
    return KalmanState(mean, np.diag(np.square(std)))


def predict(s: KalmanState) -> KalmanState:
    mean = MOTION @ s.mean
    cov = MOTION @ s.cov @ MOTION.T + _process_noise(s.mean[3])
    return KalmanState(mean, 0.5 * (cov + cov.T))


def project(s: KalmanState) -> tuple[np.ndarray, np.ndarray]:
    """Measurement-space mean and innovation covariance (includes measurement noise)."""
    with np.errstate(invalid="ignore", over="ignore"):
        mean = PROJECTION @ s.mean
        cov = PROJECTION @ s.cov @ PROJECTION.T + _measurement_noise(s.mean[3])
    return mean, cov


def _cholesky(S: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(S)):
        raise NumericalError("innovation covariance is not finite")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("innovation covariance is not positive definite") from None


def update(s: KalmanState, z: BBox) -> KalmanState:
    proj_mean, S = project(s)
    L = _cholesky(S)
    PHt = s.cov @ PROJECTION.T
    # K = P H^T S^-1, solved through the Cholesky factor
    gain = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    innovation = z.to_xyah() - proj_mean
    mean = s.mean + gain @ innovation
    cov = s.cov - gain @ S @ gain.T
    cov = 0.5 * (cov + cov.T)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalError("Kalman update produced non-finite values")
    return KalmanState(mean, cov)


def gating_distance(s: KalmanState, z: BBox) -> float:
    """Squared Mahalanobis distance of a measurement under the projected state."""
    return float(gating_distances(s, [z])[0])


def gating_distances(s: KalmanState, boxes) -> np.ndarray:
    proj_mean, S = project(s)
    L = _cholesky(S)
    if len(boxes) == 0:
        return np.zeros(0)
    d = np.array([b.to_xyah() for b in boxes]) - proj_mean
    w = np.linalg.solve(L, d.T)
    return np.sum(w * w, axis=0)
