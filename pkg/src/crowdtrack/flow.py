"""Dense flow sampling, point propagation and a block-matching flow estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .domain import FlowField, GrayFrame
from .errors import ValidationError


@dataclass(frozen=True)
class FlowParams:
    block_radius: int = 2
    search_radius: int = 3

    def __post_init__(self):
        if self.block_radius < 1 or self.search_radius < 1:
            raise ValidationError("block_radius and search_radius must be >= 1")


def _lerp(a: float, b: float, t: float) -> float:
    # a + t*(b-a) returns a exactly when a == b, so constant regions sample exactly.
    return a + t * (b - a)


def sample_flow(f: FlowField, x: float, y: float) -> tuple[float, float]:
    """Bilinearly interpolated (dx, dy) at a continuous location, clamped to the grid."""
    if f.width == 0 or f.height == 0:
        raise ValidationError("cannot sample an empty flow field")
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"non-finite sample location ({x}, {y})")
    x = min(max(float(x), 0.0), f.width - 1.0)
    y = min(max(float(y), 0.0), f.height - 1.0)
    x0 = min(int(math.floor(x)), f.width - 1)
    y0 = min(int(math.floor(y)), f.height - 1)
    x1 = min(x0 + 1, f.width - 1)
    y1 = min(y0 + 1, f.height - 1)
    tx, ty = x - x0, y - y0
    d = f.data
    out = []
    for c in (0, 1):
        top = _lerp(float(d[y0, x0, c]), float(d[y0, x1, c]), tx)
        bot = _lerp(float(d[y1, x0, c]), float(d[y1, x1, c]), tx)
        out.append(_lerp(top, bot, ty))
    return out[0], out[1]


def propagate_points(points: Iterable[tuple[float, float]], f: FlowField) -> list[tuple[float, float]]:
    out = []
    for x, y in points:
        dx, dy = sample_flow(f, x, y)
        out.append((x + dx, y + dy))
    return out


def _candidate_shifts(search_radius: int) -> list[tuple[int, int]]:
    r = search_radius
    shifts = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    # smallest magnitude first, then (dy, dx) lexicographic
    shifts.sort(key=lambda s: (s[0] * s[0] + s[1] * s[1], s[1], s[0]))
    return shifts


def estimate_flow(a: GrayFrame, b: GrayFrame, p: FlowParams = FlowParams()) -> FlowField:
    """Integer block-matching flow from ``a`` to ``b``.

    For every interior pixel the displacement (dx, dy) with |dx|, |dy| <=
    search_radius minimizing the sum of squared differences between the block
    around the pixel in ``a`` and the block around pixel + (dx, dy) in ``b``
    is selected. Ties go to the smaller displacement magnitude, then to the
    smaller (dy, dx). Pixels closer than block_radius + search_radius to the
    border copy the flow of the nearest interior pixel.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ValidationError(f"frame shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    br, sr = p.block_radius, p.search_radius
    margin = br + sr
    H, W = a.pixels.shape
    if W <= 2 * margin or H <= 2 * margin:
        raise ValidationError(f"frames of {W}x{H} are too small for block {br} and search {sr}")

    A = a.pixels.astype(np.float64)
    B = b.pixels.astype(np.float64)
    ih, iw = H - 2 * margin, W - 2 * margin
    shifts = _candidate_shifts(sr)
    ssd = np.empty((len(shifts), ih, iw))
    for k, (dx, dy) in enumerate(shifts):
        # squared differences over the region that interior blocks can reach
        ya, xa = margin - br, margin - br
        h2, w2 = ih + 2 * br, iw + 2 * br
        diff = A[ya:ya + h2, xa:xa + w2] - B[ya + dy:ya + dy + h2, xa + dx:xa + dx + w2]
        sq = diff * diff
        acc = np.zeros((ih, iw))
        for oy in range(2 * br + 1):
            for ox in range(2 * br + 1):
                acc += sq[oy:oy + ih, ox:ox + iw]
        ssd[k] = acc
    best = np.argmin(ssd, axis=0)
    table = np.array(shifts, dtype=np.float32)
    interior = table[best]

    ys = np.clip(np.arange(H) - margin, 0, ih - 1)
    xs = np.clip(np.arange(W) - margin, 0, iw - 1)
    return FlowField(interior[ys][:, xs])
