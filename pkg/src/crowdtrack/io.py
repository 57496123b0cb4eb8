"""Readers and writers for every on-disk format the toolkit exchanges.

Formats
-------
* MOTChallenge text: ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z``.
* Middlebury ``.flo``: float32 sentinel 202021.25, int32 width, int32 height,
  then interleaved little-endian float32 (u, v) pairs, row-major.
* Pose records: JSON lines with ``frame``, optional ``track_id``, optional
  ``box_index`` and ``keypoints`` as ``[x, y, conf]`` triples.
* Embedding sidecar: header ``D <dim> N <count>`` then N*D float32 LE.
* Raw grayscale frame: header ``W <w> H <h>`` then w*h float32 LE.
* Heatmap: header ``K <k> H <h> W <w>`` then k*h*w float32 LE.

Every parser either returns a value or raises a :class:`CrowdTrackError`
subclass; no other exception escapes.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .domain import BBox, Detection, FlowField, GrayFrame, Heatmap, Pose, TrackedBox
from .errors import CrowdTrackError, FormatError, LengthError, ParseError, ValidationError

FLO_SENTINEL = 202021.25
MOT_KINDS = ("detections", "tracks", "ground_truth")

# ---------------------------------------------------------------------------
# MOTChallenge text
# ---------------------------------------------------------------------------


def _to_float(tok: str, lineno: int, name: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"field {name!r} is not a number: {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"field {name!r} is not finite: {tok!r}", lineno)
    return v


def _to_int(tok: str, lineno: int, name: str) -> int:
    v = _to_float(tok, lineno, name)
    if v != int(v):
        raise ParseError(f"field {name!r} is not an integer: {tok!r}", lineno)
    return int(v)


def parse_mot(text: str, kind: str = "tracks") -> list:
    """Parse MOTChallenge lines into ``Detection`` (kind='detections') or ``TrackedBox``.

    Output is stably sorted by (frame, id), so for detections the input order
    within a frame is preserved and matches the embedding sidecar order.
    """
    if kind not in MOT_KINDS:
        raise ValidationError(f"unknown MOT kind {kind!r}")
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        toks = [t.strip() for t in line.split(",")]
        if len(toks) < 7 or len(toks) > 10:
            raise ParseError(f"expected 7 to 10 comma-separated fields, got {len(toks)}", lineno)
        frame = _to_int(toks[0], lineno, "frame")
        oid = _to_int(toks[1], lineno, "id")
        left, top, w, h = (_to_float(t, lineno, n) for t, n in zip(toks[2:6], ("bb_left", "bb_top", "bb_width", "bb_height")))
        conf = _to_float(toks[6], lineno, "conf")
        for i, t in enumerate(toks[7:], start=7):
            _to_float(t, lineno, f"col{i}")
        if w <= 0 or h <= 0:
            raise ValidationError(f"line {lineno}: non-positive box size {w}x{h}")
        if kind != "detections" and oid <= 0:
            raise ValidationError(f"line {lineno}: track id must be positive, got {oid}")
        try:
            box = BBox.from_tlwh(left, top, w, h)
            if kind == "detections":
                item = Detection(frame=frame, box=box, score=conf)
            else:
                item = TrackedBox(frame=frame, track_id=oid, box=box, score=conf)
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        rows.append(((frame, oid), item))
    rows.sort(key=lambda r: r[0])
    return [item for _, item in rows]


def _mot_line(frame: int, oid: int, box: BBox, score: float) -> str:
    return (
        f"{frame},{oid},{box.x1:.6f},{box.y1:.6f},{box.width:.6f},{box.height:.6f},"
        f"{score:.6f},-1,-1,-1"
    )


def write_mot(items: Iterable[Union[TrackedBox, Detection]]) -> str:
    """Serialize boxes in (frame, id) order; detections are written with id -1."""
    keyed = []
    for it in items:
        oid = it.track_id if isinstance(it, TrackedBox) else -1
        keyed.append(((it.frame, oid), _mot_line(it.frame, oid, it.box, it.score)))
    keyed.sort(key=lambda r: r[0])
    return "".join(line + "\n" for _, line in keyed)


# ---------------------------------------------------------------------------
# Binary helpers
# ---------------------------------------------------------------------------


def _split_header(data: bytes, fmt_name: str) -> tuple[list[str], bytes]:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{fmt_name}: missing header line")
    try:
        header = data[:nl].decode("ascii").split()
    except UnicodeDecodeError:
        raise FormatError(f"{fmt_name}: header is not ASCII") from None
    return header, data[nl + 1:]


def _header_fields(header: list[str], keys: Sequence[str], fmt_name: str) -> list[int]:
    if len(header) != 2 * len(keys) or header[0::2] != list(keys):
        raise FormatError(f"{fmt_name}: expected header {' '.join(k + ' <n>' for k in keys)}, got {' '.join(header)!r}")
    out = []
    for tok in header[1::2]:
        try:
            v = int(tok)
        except ValueError:
            raise FormatError(f"{fmt_name}: bad header value {tok!r}") from None
        if v < 0:
            raise FormatError(f"{fmt_name}: negative header value {v}")
        out.append(v)
    return out


def _payload(body: bytes, count: int, fmt_name: str) -> np.ndarray:
    need = 4 * count
    if len(body) != need:
        raise LengthError(f"{fmt_name}: expected {need} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").astype(np.float32)


# ---------------------------------------------------------------------------
# Middlebury .flo
# ---------------------------------------------------------------------------


def read_flo(data: bytes) -> FlowField:
    if len(data) < 12:
        raise LengthError(f".flo: stream of {len(data)} bytes is shorter than the 12-byte header")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != FLO_SENTINEL:
        raise FormatError(f".flo: bad sentinel {magic!r}")
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise FormatError(f".flo: invalid dimensions {width}x{height}")
    vals = _payload(data[12:], 2 * width * height, ".flo")
    try:
        return FlowField(vals.reshape(height, width, 2))
    except ValidationError as exc:
        raise FormatError(f".flo: {exc}") from None


def write_flo(flow: FlowField) -> bytes:
    head = struct.pack("<fii", FLO_SENTINEL, flow.width, flow.height)
    return head + flow.data.astype("<f4").tobytes()


# ---------------------------------------------------------------------------
# Embedding sidecar
# ---------------------------------------------------------------------------


def read_embeddings(data: bytes) -> np.ndarray:
    """Return an (N, D) float32 array."""
    header, body = _split_header(data, "embeddings")
    dim, count = _header_fields(header, ("D", "N"), "embeddings")
    return _payload(body, dim * count, "embeddings").reshape(count, dim)


def write_embeddings(emb) -> bytes:
    emb = np.asarray(emb, dtype=np.float32)
    if emb.ndim != 2:
        raise ValidationError(f"embeddings must be (N, D), got shape {emb.shape}")
    n, d = emb.shape
    return f"D {d} N {n}\n".encode("ascii") + emb.astype("<f4").tobytes()


def attach_embeddings(dets: Sequence[Detection], emb: np.ndarray) -> list[Detection]:
    """Pair detections (in parse order) with sidecar rows, renormalizing float32 rounding."""
    if len(dets) != emb.shape[0]:
        raise ValidationError(f"{len(dets)} detections but {emb.shape[0]} embeddings")
    out = []
    for det, e in zip(dets, emb):
        e = np.asarray(e, dtype=np.float64)
        n = np.linalg.norm(e)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-3:
            raise ValidationError(f"embedding for frame {det.frame} is not unit norm ({n})")
        out.append(det.replace(embedding=e / n))
    return out


# ---------------------------------------------------------------------------
# Raw grayscale frames and heatmaps
# ---------------------------------------------------------------------------


def read_gray(data: bytes) -> GrayFrame:
    header, body = _split_header(data, "gray frame")
    w, h = _header_fields(header, ("W", "H"), "gray frame")
    if w == 0 or h == 0:
        raise FormatError("gray frame: empty dimensions")
    return GrayFrame(_payload(body, w * h, "gray frame").reshape(h, w))


def write_gray(frame: GrayFrame) -> bytes:
    return f"W {frame.width} H {frame.height}\n".encode("ascii") + frame.pixels.astype("<f4").tobytes()


def read_heatmap(data: bytes) -> Heatmap:
    header, body = _split_header(data, "heatmap")
    k, h, w = _header_fields(header, ("K", "H", "W"), "heatmap")
    if min(k, h, w) == 0:
        raise FormatError("heatmap: empty dimensions")
    vals = _payload(body, k * h * w, "heatmap").reshape(k, h, w)
    try:
        return Heatmap(vals)
    except ValidationError as exc:
        raise FormatError(f"heatmap: {exc}") from None


def write_heatmap(hm: Heatmap) -> bytes:
    return f"K {hm.K} H {hm.height} W {hm.width}\n".encode("ascii") + hm.values.astype("<f4").tobytes()


# ---------------------------------------------------------------------------
# Pose records (JSON lines)
# ---------------------------------------------------------------------------

_POSE_FIELDS = {"frame", "track_id", "box_index", "keypoints"}


def _opt_int(rec: dict, name: str, lineno: int):
    v = rec.get(name)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{name} must be an integer", lineno)
    return v


def read_pose_records(text: str, K: int | None = None) -> list[Pose]:
    poses = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except (json.JSONDecodeError, RecursionError) as exc:
            raise ParseError(f"invalid JSON: {exc}", lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", lineno)
        extra = set(rec) - _POSE_FIELDS
        if extra:
            raise ParseError(f"unknown fields {sorted(extra)}", lineno)
        if "frame" not in rec or "keypoints" not in rec:
            raise ParseError("record needs 'frame' and 'keypoints'", lineno)
        frame = _opt_int(rec, "frame", lineno)
        if frame is None:
            raise ParseError("frame must be an integer", lineno)
        kps = rec["keypoints"]
        if not isinstance(kps, list) or not all(
            isinstance(t, list) and len(t) == 3
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in t)
            for t in kps
        ):
            raise ParseError("keypoints must be a list of [x, y, conf] triples", lineno)
        if K is None:
            K = len(kps)
        elif len(kps) != K:
            raise ValidationError(f"line {lineno}: expected {K} keypoints, got {len(kps)}")
        try:
            pose = Pose(frame=frame, keypoints=np.array(kps, dtype=np.float64).reshape(-1, 3),
                        track_id=_opt_int(rec, "track_id", lineno),
                        box_index=_opt_int(rec, "box_index", lineno))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        poses.append(pose)
    return poses


def _r6(v: float):
    r = round(float(v), 6)
    return int(r) if r == int(r) and abs(r) < 2**53 else r


def write_pose_records(poses: Iterable[Pose]) -> str:
    lines = []
    K = None
    for p in poses:
        if K is None:
            K = p.K
        elif p.K != K:
            raise ValidationError(f"pose records must share K; got {K} and {p.K}")
        rec = {"frame": p.frame}
        if p.track_id is not None:
            rec["track_id"] = p.track_id
        if p.box_index is not None:
            rec["box_index"] = p.box_index
        rec["keypoints"] = [[_r6(x), _r6(y), _r6(c)] for x, y, c in p.keypoints]
        lines.append(json.dumps(rec, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# Filesystem helpers
# ---------------------------------------------------------------------------


def atomic_write(path: Union[str, Path], data: Union[str, bytes]) -> None:
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


__all__ = [
    "CrowdTrackError",
    "FLO_SENTINEL",
    "atomic_write",
    "attach_embeddings",
    "parse_mot",
    "read_embeddings",
    "read_flo",
    "read_gray",
    "read_heatmap",
    "read_pose_records",
    "write_embeddings",
    "write_flo",
    "write_gray",
    "write_heatmap",
    "write_mot",
    "write_pose_records",
]
