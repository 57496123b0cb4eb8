"""Exhaustive search over tracker parameters, scored by MOTA."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from typing import Mapping, Sequence

from ..domain import Detection, TrackedBox
from ..errors import UsageError
from ..metrics.mot import mot_metrics
from .deepsort import TrackerParams, flatten, run_tracker

GRID_AXES = ("max_cos_dis", "nn_budget", "max_age", "n_init", "max_iou_dis")

Sequences = Sequence[tuple[Sequence[Detection], Sequence[TrackedBox]]]


def _pooled_mota(params: TrackerParams, sequences: Sequences, iou_threshold: float) -> dict:
    fp = fn = idsw = gt_count = 0
    for dets, gt in sequences:
        frames = {g.frame for g in gt}
        rep = mot_metrics(gt, flatten(run_tracker(dets, params, frames)), iou_threshold)
        fp, fn, idsw, gt_count = fp + rep.fp, fn + rep.fn, idsw + rep.idsw, gt_count + rep.gt_count
    mota = 100.0 * (1.0 - (fp + fn + idsw) / gt_count)
    return {"mota": mota, "fp": fp, "fn": fn, "idsw": idsw}


def grid_search(sequences: Sequences, grid: Mapping[str, Sequence], base: TrackerParams = TrackerParams(),
                iou_threshold: float = 0.5, workers: int = 1):
    """Run the tracker at every grid point and keep the MOTA maximizer.

    Axes iterate in ``GRID_AXES`` order (last axis fastest); ties keep the
    first point. Returns ``(best_params, table)`` where each table row holds
    the parameter values plus pooled mota/fp/fn/idsw over all sequences.
    """
    unknown = set(grid) - set(GRID_AXES)
    if unknown:
        raise UsageError(f"unknown grid axes {sorted(unknown)}")
    if not sequences:
        raise UsageError("grid search needs at least one sequence")
    axes = [a for a in GRID_AXES if a in grid]
    for a in axes:
        if len(grid[a]) == 0:
            raise UsageError(f"grid axis {a!r} is empty")
    points = [replace(base, **dict(zip(axes, vals)))
              for vals in itertools.product(*(grid[a] for a in axes))]

    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_pooled_mota, points, itertools.repeat(sequences),
                                   itertools.repeat(iou_threshold)))
    else:
        scores = [_pooled_mota(pt, sequences, iou_threshold) for pt in points]

    table = []
    best, best_mota = None, None
    for pt, sc in zip(points, scores):
        row = {k: v for k, v in asdict(pt).items() if k in GRID_AXES}
        row.update(sc)
        table.append(row)
        if best_mota is None or sc["mota"] > best_mota:
            best, best_mota = pt, sc["mota"]
    return best, table
