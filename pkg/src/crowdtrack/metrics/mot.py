"""CLEAR-MOT accuracy and precision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..assignment import FORBIDDEN, hungarian
from ..detpost import iou
from ..domain import TrackedBox
from ..errors import ValidationError


@dataclass(frozen=True)
class MotReport:
    """MOTA in percent; MOTP as mean IoU distance (1 - IoU) over matches, in [0, 1]."""

    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    gt_count: int
    matches: int = 0


def _index(items: Sequence[TrackedBox], what: str) -> dict[int, dict[int, TrackedBox]]:
    out: dict[int, dict[int, TrackedBox]] = {}
    for it in items:
        frame = out.setdefault(it.frame, {})
        if it.track_id in frame:
            raise ValidationError(f"duplicate {what} id {it.track_id} in frame {it.frame}")
        frame[it.track_id] = it
    return out


def mot_metrics(gt: Sequence[TrackedBox], preds: Sequence[TrackedBox],
                iou_threshold: float = 0.5) -> MotReport:
    """Frame-by-frame CLEAR-MOT matching.

    Correspondences from the previous frame are kept while their IoU stays at
    or above the threshold; the rest are assigned optimally on 1 - IoU. An ID
    switch is counted when a ground-truth object is matched to a hypothesis
    different from the one it was last matched to.
    """
    G = _index(gt, "ground-truth")
    H = _index(preds, "hypothesis")
    if not gt:
        raise ValidationError("ground truth is empty")
    fp = fn = idsw = nmatch = 0
    dist_sum = 0.0
    active: dict[int, int] = {}
    last_hyp: dict[int, int] = {}
    for frame in sorted(set(G) | set(H)):
        g_f, h_f = G.get(frame, {}), H.get(frame, {})
        matched: dict[int, int] = {}
        for gid, hid in active.items():
            if gid in g_f and hid in h_f and iou(g_f[gid].box, h_f[hid].box) >= iou_threshold:
                matched[gid] = hid
        used_h = set(matched.values())
        g_rest = sorted(g for g in g_f if g not in matched)
        h_rest = sorted(h for h in h_f if h not in used_h)
        if g_rest and h_rest:
            cost = [[(1.0 - v) if (v := iou(g_f[g].box, h_f[h].box)) >= iou_threshold else FORBIDDEN
                     for h in h_rest] for g in g_rest]
            for r, c in hungarian(cost):
                gid, hid = g_rest[r], h_rest[c]
                if gid in last_hyp and last_hyp[gid] != hid:
                    idsw += 1
                matched[gid] = hid
        for gid, hid in matched.items():
            dist_sum += 1.0 - iou(g_f[gid].box, h_f[hid].box)
            last_hyp[gid] = hid
        nmatch += len(matched)
        fp += len(h_f) - len(matched)
        fn += len(g_f) - len(matched)
        active = matched
    gt_count = len(gt)
    mota = 100.0 * (1.0 - (fp + fn + idsw) / gt_count)
    motp = dist_sum / nmatch if nmatch else float("nan")
    return MotReport(mota=mota, motp=motp, fp=fp, fn=fn, idsw=idsw, gt_count=gt_count, matches=nmatch)
