"""``crowdtrack`` command line: track, pose, eval, gridsearch, synth, overlay.

Exit codes: 0 success, 2 missing or unreadable input (or unwritable output),
3 validation or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _stdio
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import io as cio
from .config import RunConfig, load_config
from .detpost import fuse_detections, nms, set_nms, smooth_boxes
from .domain import Detection, Pose, TrackedBox
from .errors import CrowdTrackError, UsageError, ValidationError
from .metrics import DetEvalParams, PoseEvalParams, detection_ap, miss_rate_curve, mmr, mot_metrics, pose_ap, pr_curve
from .pose import PoseSequence, assign_poses_to_boxes, decode_heatmap, fuse_heatmaps, smooth_sequence, transfer_ids
from .synth import generate, write_scenario
from .tracker.deepsort import FrameResult, Tracker, flatten
from .tracker.gridsearch import GRID_AXES, grid_search

EXIT_OK, EXIT_MISSING, EXIT_INVALID = 0, 2, 3
CONFIG_ECHO = "effective_config.txt"


class MissingInput(Exception):
    """A required input file or directory is absent or unreadable."""


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise MissingInput(f"cannot read {path}: {exc.strerror or exc}") from None


def _read_text(path) -> str:
    return _read_bytes(path).decode("utf-8")


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    cio.atomic_write(out_dir / CONFIG_ECHO, cfg.to_text())


def _group(items, key=lambda x: x.frame) -> dict:
    out: dict = {}
    for it in items:
        out.setdefault(key(it), []).append(it)
    return out


class _FlowStore:
    """Loads ``{src}_{dst}.flo`` from a directory on first use."""

    def __init__(self, root: Optional[str]):
        self.root = Path(root) if root else None
        self.cache: dict = {}

    def get(self, src: int, dst: int):
        if (src, dst) not in self.cache:
            if self.root is None:
                raise MissingInput(f"flow {src}->{dst} needed but no --flows directory given")
            self.cache[(src, dst)] = cio.read_flo(_read_bytes(self.root / f"{src}_{dst}.flo"))
        return self.cache[(src, dst)]


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def _load_detections(det_path, emb_path) -> list[Detection]:
    dets = cio.parse_mot(_read_text(det_path), "detections")
    emb = cio.read_embeddings(_read_bytes(emb_path))
    return cio.attach_embeddings(dets, emb)


def _attach_proposals(dets: list[Detection], path) -> list[Detection]:
    ids = [ln.strip() for ln in _read_text(path).splitlines() if ln.strip()]
    if len(ids) != len(dets):
        raise ValidationError(f"{len(ids)} proposal ids for {len(dets)} detections")
    try:
        return [d.replace(proposal_id=int(i)) for d, i in zip(dets, ids)]
    except ValueError:
        raise ValidationError("proposal ids must be integers") from None


def _as_detection(tb: TrackedBox) -> Detection:
    return Detection(frame=tb.frame, box=tb.box, score=tb.score)


def run_track(cfg: RunConfig, det, emb, out, det_b=None, emb_b=None, proposals=None, flows=None) -> dict:
    st = cfg.stages
    dets = _load_detections(det, emb)
    if proposals:
        dets = _attach_proposals(dets, proposals)
    fuse = st.fuse == "on" or (st.fuse == "auto" and det_b is not None)
    if fuse and (det_b is None or emb_b is None):
        raise UsageError("fusion needs both --det-b and --emb-b")
    by_b = _group(_load_detections(det_b, emb_b)) if fuse else {}
    by_a = _group(dets)
    flow_store = _FlowStore(flows)
    smooth = st.smooth_boxes if flows else "off"
    suppress = {"nms": nms, "set_nms": set_nms, "none": lambda d, p: list(d)}[st.nms]

    frames = sorted(set(by_a) | set(by_b))
    frames = list(range(frames[0], frames[-1] + 1)) if frames else []
    tracker = Tracker(cfg.tracker)
    results: list[FrameResult] = []
    prev_dets: list[Detection] = []
    prev_out: list[TrackedBox] = []
    n_in = 0
    for k in frames:
        cur = by_a.get(k, [])
        if fuse:
            cur = fuse_detections(cur, by_b.get(k, []), cfg.fusion)
        cur = suppress(cur, cfg.nms)
        n_in += len(cur)
        if smooth == "before_tracker" and prev_dets and cur:
            cur = smooth_boxes(prev_dets, cur, flow_store.get(k - 1, k), cfg.box_smooth)
        prev_dets = cur
        res = tracker.step(cur, k)
        if smooth == "after_tracker" and prev_out and res.outputs:
            sm = smooth_boxes(prev_out, [_as_detection(b) for b in res.outputs], flow_store.get(k - 1, k),
                              cfg.box_smooth)
            res = FrameResult(k, [dataclasses.replace(b, box=s.box) for b, s in zip(res.outputs, sm)])
        prev_out = res.outputs
        results.append(res)

    boxes = flatten(results)
    out = Path(out)
    cio.atomic_write(out, cio.write_mot(boxes))
    _echo_config(cfg, out.parent)
    return {"frames": len(frames), "detections": n_in,
            "tracks": len({b.track_id for b in boxes}), "boxes": len(boxes)}


# ---------------------------------------------------------------------------
# pose
# ---------------------------------------------------------------------------


def _tracks_by_frame(path) -> list[FrameResult]:
    boxes = cio.parse_mot(_read_text(path), "tracks")
    return [FrameResult(f, sorted(bs, key=lambda b: b.track_id)) for f, bs in sorted(_group(boxes).items())]


def _decode_heatmap_dir(root, tracks: list[FrameResult]) -> list[Pose]:
    """Decode ``{frame}_{box_index}[_{tag}].hm`` files; two tags are fused first.

    Grid cell (col, row) of an (H, W) map lands at
    ``box.top_left + (col * box.w / W, row * box.h / H)``.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingInput(f"heatmap directory {root} not found")
    groups: dict = {}
    for path in sorted(root.glob("*.hm")):
        parts = path.stem.split("_")
        try:
            frame, idx = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise ValidationError(f"heatmap file name {path.name!r} is not frame_box[_tag].hm") from None
        groups.setdefault((frame, idx), []).append(path)
    boxes = {fr.frame: fr.outputs for fr in tracks}
    poses = []
    for (frame, idx), paths in sorted(groups.items()):
        if len(paths) > 2:
            raise ValidationError(f"more than two heatmaps for frame {frame} box {idx}")
        hms = [cio.read_heatmap(_read_bytes(p)) for p in paths]
        hm = fuse_heatmaps(*hms) if len(hms) == 2 else hms[0]
        fb = boxes.get(frame, [])
        if not 0 <= idx < len(fb):
            raise ValidationError(f"heatmap for frame {frame} references missing box {idx}")
        b = fb[idx].box
        pose = decode_heatmap(hm, (b.x1, b.y1), (b.width / hm.width, b.height / hm.height))
        poses.append(pose.replace(frame=frame, box_index=idx))
    return poses


def _sequences(tracks: list[FrameResult], poses: list[Pose]) -> list[PoseSequence]:
    if poses and all(p.box_index is None and p.track_id is not None for p in poses):
        seqs: dict = {}
        for p in poses:
            seq = seqs.setdefault(p.track_id, PoseSequence(p.track_id))
            if p.frame in seq.poses:
                raise ValidationError(f"two poses for track {p.track_id} in frame {p.frame}")
            seq.poses[p.frame] = p
        return [seqs[t] for t in sorted(seqs)]
    if any(p.box_index is None for p in poses):
        with_idx = [p for p in poses if p.box_index is not None]
        poses = with_idx + assign_poses_to_boxes(tracks, [p for p in poses if p.box_index is None])
    return transfer_ids(tracks, poses)


def run_pose(cfg: RunConfig, tracks, out, poses=None, heatmaps=None, flows=None) -> dict:
    if (poses is None) == (heatmaps is None):
        raise UsageError("give exactly one of --poses or --heatmaps")
    frames = _tracks_by_frame(tracks)
    raw = cio.read_pose_records(_read_text(poses)) if poses else _decode_heatmap_dir(heatmaps, frames)
    seqs = _sequences(frames, raw)
    if cfg.stages.pose_smooth == "on" and cfg.pose_smooth.alpha > 0:
        store = _FlowStore(flows)
        smoothed = []
        for seq in seqs:
            needed = {}
            for k in seq.poses:
                for nb in (k - 1, k + 1):
                    if nb in seq.poses:
                        needed[(nb, k)] = store.get(nb, k)
            smoothed.append(smooth_sequence(seq, needed, cfg.pose_smooth))
        seqs = smoothed
    result = sorted((p for s in seqs for p in s.poses.values()), key=lambda p: (p.frame, p.track_id))
    out = Path(out)
    cio.atomic_write(out, cio.write_pose_records(result))
    _echo_config(cfg, out.parent)
    return {"tracks": len(seqs), "poses": len(result)}


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _fmt_num(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return str(v)


def run_eval(cfg: RunConfig, gt, pred, out, det=None, gt_poses=None, pred_poses=None) -> dict:
    gt_boxes = cio.parse_mot(_read_text(gt), "tracks")
    preds = cio.parse_mot(_read_text(pred), "tracks")
    if not gt_boxes:
        raise ValidationError("ground-truth file is empty")
    lo, hi = min(g.frame for g in gt_boxes), max(g.frame for g in gt_boxes)
    stray = sorted({p.frame for p in preds if not lo <= p.frame <= hi})
    if stray:
        raise ValidationError(f"prediction frames {stray[:5]} lie outside the ground-truth range {lo}..{hi}")
    dets = (cio.parse_mot(_read_text(det), "detections") if det
            else [Detection(frame=p.frame, box=p.box, score=p.score) for p in preds])
    n_frames = hi - lo + 1
    dp = DetEvalParams(iou_threshold=cfg.eval.iou_threshold)
    mot = mot_metrics(gt_boxes, preds, cfg.eval.iou_threshold)
    report = {
        "det_ap": 100.0 * detection_ap(gt_boxes, dets, dp),
        "det_mmr": mmr(gt_boxes, dets, dp, n_frames),
        "mota": mot.mota,
        "motp": mot.motp,
        "fp": mot.fp,
        "fn": mot.fn,
        "idsw": mot.idsw,
        "gt_count": mot.gt_count,
        "matches": mot.matches,
    }
    if (gt_poses is None) != (pred_poses is None):
        raise UsageError("pose evaluation needs both --gt-poses and --pred-poses")
    if gt_poses:
        gp = cio.read_pose_records(_read_text(gt_poses))
        pp = cio.read_pose_records(_read_text(pred_poses))
        if not gp:
            raise ValidationError("ground-truth pose file is empty")
        K = gp[0].K
        avg, ap50, ap75 = pose_ap(gp, pp, PoseEvalParams(K=K, sigmas=(cfg.eval.oks_sigma,) * K))
        report.update(pose_ap=avg, pose_ap50=ap50, pose_ap75=ap75)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in report.items()}
    cio.atomic_write(out / "report.json", json.dumps(clean, indent=2, sort_keys=True) + "\n")
    table = ["# motp: mean IoU distance (1 - IoU) over matches, in [0, 1]; AP/MMR/MOTA in percent",
             f"{'metric':<10} value"]
    table += [f"{k:<10} {_fmt_num(v)}" for k, v in report.items()]
    cio.atomic_write(out / "report.txt", "\n".join(table) + "\n")
    cio.atomic_write(out / "pr.csv", _csv(("score", "recall", "precision"), pr_curve(gt_boxes, dets, dp)))
    cio.atomic_write(out / "mr.csv", _csv(("fppi", "miss_rate"), miss_rate_curve(gt_boxes, dets, dp, n_frames)))
    _echo_config(cfg, out)
    return report


def _csv(header, rows) -> str:
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# gridsearch / synth / overlay
# ---------------------------------------------------------------------------


def run_gridsearch(cfg: RunConfig, scenarios: Sequence[str], out, workers: int = 1) -> dict:
    if not cfg.grid:
        raise ValidationError("grid is empty; give grid.<axis> = v1,v2,... or --grid")
    sequences = []
    for sc in scenarios:
        root = Path(sc)
        dets = _load_detections(root / "det.txt", root / "emb.bin")
        sequences.append((dets, cio.parse_mot(_read_text(root / "gt.txt"), "tracks")))
    best, table = grid_search(sequences, cfg.grid, cfg.tracker, cfg.eval.iou_threshold, workers)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cio.atomic_write(out / "best_params.txt", best.to_text())
    cols = [a for a in GRID_AXES if a in cfg.grid] + ["mota", "fp", "fn", "idsw"]
    cio.atomic_write(out / "grid.csv", _csv(cols, [[row[c] for c in cols] for row in table]))
    _echo_config(cfg, out)
    return {"points": len(table), **{a: getattr(best, a) for a in GRID_AXES}}


def run_synth(cfg: RunConfig, out, with_flows: bool = True, with_frames: bool = True) -> dict:
    scenario = generate(cfg.synth)
    out = Path(out)
    manifest = write_scenario(out, scenario, cfg.noise, cfg.synth.seed, with_flows, with_frames)
    _echo_config(cfg, out)
    return {"frames": cfg.synth.n_frames, "agents": cfg.synth.n_agents, "files": len(manifest["files"]) + 1}


_PALETTE = ("#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324")


def _svg_frame(size, boxes: Sequence[TrackedBox], poses: Sequence[Pose]) -> str:
    W, H = size
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>']
    for b in boxes:
        c = _PALETTE[b.track_id % len(_PALETTE)]
        x, y = b.box.x1, b.box.y1
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{b.box.width:.2f}" height="{b.box.height:.2f}" '
                     f'fill="none" stroke="{c}" stroke-width="1.5"/>')
        parts.append(f'<text x="{x:.2f}" y="{max(y - 2, 8):.2f}" font-size="10" fill="{c}">{b.track_id}</text>')
    for p in poses:
        c = _PALETTE[(p.track_id or 0) % len(_PALETTE)]
        for kx, ky, conf in p.keypoints:
            if conf > 0:
                parts.append(f'<circle cx="{kx:.2f}" cy="{ky:.2f}" r="2" fill="{c}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def run_overlay(cfg: RunConfig, tracks, out, poses=None, size=None) -> dict:
    boxes = cio.parse_mot(_read_text(tracks), "tracks")
    pose_list = cio.read_pose_records(_read_text(poses)) if poses else []
    if size is None:
        xs = [b.box.x2 for b in boxes] + [float(x) for p in pose_list for x in p.xy[:, 0]]
        ys = [b.box.y2 for b in boxes] + [float(y) for p in pose_list for y in p.xy[:, 1]]
        size = (int(math.ceil(max(xs, default=1))), int(math.ceil(max(ys, default=1))))
    by_box, by_pose = _group(boxes), _group(pose_list)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    frames = sorted(set(by_box) | set(by_pose))
    for f in frames:
        cio.atomic_write(out / f"{f:06d}.svg", _svg_frame(size, by_box.get(f, []), by_pose.get(f, [])))
    _echo_config(cfg, out)
    return {"frames": len(frames)}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("size must look like WIDTHxHEIGHT") from None
    return w, h


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="seed for every stochastic stage")

    parser = argparse.ArgumentParser(prog="crowdtrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", parents=[common], help="detections + embeddings -> MOT tracks")
    p.add_argument("--det", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--det-b", help="second detector's detections (enables fusion)")
    p.add_argument("--emb-b", help="embeddings for --det-b")
    p.add_argument("--proposals", help="one proposal id per detection line, for Set-NMS")
    p.add_argument("--flows", help="directory of {a}_{b}.flo files (enables box smoothing)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pose", parents=[common], help="tracks + per-box poses -> smoothed poses with ids")
    p.add_argument("--tracks", required=True)
    p.add_argument("--poses")
    p.add_argument("--heatmaps", help="directory of frame_box[_tag].hm files")
    p.add_argument("--flows")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--det", help="detections for AP/MMR (default: the predicted tracks)")
    p.add_argument("--gt-poses")
    p.add_argument("--pred-poses")
    p.add_argument("--out", required=True, help="report directory")

    p = sub.add_parser("gridsearch", parents=[common], help="tune tracker parameters by MOTA")
    p.add_argument("--scenario", action="append", required=True,
                   help="directory with det.txt, emb.bin, gt.txt (repeatable)")
    p.add_argument("--grid", action="append", default=[], metavar="AXIS=V1,V2,...")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scenario directory")
    p.add_argument("--agents", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--layout", choices=("lanes", "free"))
    p.add_argument("--no-flows", action="store_true")
    p.add_argument("--no-frames", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("overlay", parents=[common], help="per-frame SVG overlays of boxes and poses")
    p.add_argument("--tracks", required=True)
    p.add_argument("--poses")
    p.add_argument("--size", type=_size, help="canvas WIDTHxHEIGHT (default: fit content)")
    p.add_argument("--out", required=True)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"synth.seed={args.seed}")
    if args.command == "synth":
        for flag, key in (("agents", "n_agents"), ("frames", "n_frames"), ("layout", "layout")):
            if getattr(args, flag) is not None:
                overrides.append(f"synth.{key}={getattr(args, flag)}")
    if args.command == "gridsearch":
        overrides += [f"grid.{g}" for g in args.grid]
    if args.config and not Path(args.config).is_file():
        raise MissingInput(f"config file {args.config} not found")
    return load_config(args.config, overrides)


def _dispatch(args, cfg: RunConfig) -> dict:
    c = args.command
    if c == "track":
        return run_track(cfg, args.det, args.emb, args.out, args.det_b, args.emb_b, args.proposals, args.flows)
    if c == "pose":
        return run_pose(cfg, args.tracks, args.out, args.poses, args.heatmaps, args.flows)
    if c == "eval":
        return run_eval(cfg, args.gt, args.pred, args.out, args.det, args.gt_poses, args.pred_poses)
    if c == "gridsearch":
        return run_gridsearch(cfg, args.scenario, args.out, args.workers)
    if c == "synth":
        return run_synth(cfg, args.out, not args.no_flows, not args.no_frames)
    return run_overlay(cfg, args.tracks, args.out, args.poses, args.size)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        summary = _dispatch(args, cfg)
    except MissingInput as exc:
        print(f"crowdtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CrowdTrackError as exc:
        print(f"crowdtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"crowdtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    print(" ".join(f"{k}={_fmt_num(v)}" for k, v in summary.items()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
