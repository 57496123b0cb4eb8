"""Deterministic synthetic scenarios with exact ground truth.

Agents are boxes moving at constant velocity and bouncing off walls. All
positions, sizes and velocities are multiples of ``velocity_quantum`` (a power
of two), so boxes, keypoints and flow values are exactly representable in
float32 and propagating ground truth through the emitted flow fields
reproduces the next frame's ground truth bit for bit.

Randomness comes from numpy's PCG64 generator seeded with the scenario seed
(``numpy.random.Generator(numpy.random.PCG64(seed))``), drawn in a fixed order.

With ``layout="lanes"`` every agent lives in its own horizontal lane so boxes
(and their flow footprints) never overlap. With ``layout="free"`` agents
roam the whole arena; flow and rendering follow the highest-index agent
wherever footprints overlap.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import BBox, Detection, FlowField, GrayFrame, Pose, TrackedBox
from .errors import ValidationError
from .io import atomic_write, write_embeddings, write_flo, write_gray, write_mot, write_pose_records
from .detpost import iou

LANE_MARGIN = 3
FP_MAX_IOU = 0.2


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ScenarioParams:
    n_agents: int = 4
    n_frames: int = 30
    arena: tuple = (256, 192)
    speed_range: tuple = (0.5, 3.0)
    box_size_range: tuple = (24, 48)
    K: int = 14
    embedding_dim: int = 32
    seed: int = 0
    layout: str = "lanes"
    velocity_quantum: float = 0.125

    def __post_init__(self):
        if self.n_agents < 1 or self.n_frames < 1 or self.K < 1 or self.embedding_dim < 1:
            raise ValidationError("n_agents, n_frames, K and embedding_dim must be positive")
        W, H = self.arena
        lo, hi = self.box_size_range
        if W <= 0 or H <= 0 or lo <= 0 or hi < lo:
            raise ValidationError("arena and box sizes must be positive with min <= max")
        if self.speed_range[0] < 0 or self.speed_range[1] < self.speed_range[0]:
            raise ValidationError("speed_range must be nonnegative with min <= max")
        if self.layout not in ("lanes", "free"):
            raise ValidationError(f"unknown layout {self.layout!r}")
        q = self.velocity_quantum
        if q <= 0 or math.frexp(q)[0] != 0.5:
            raise ValidationError("velocity_quantum must be a positive power of two")
        if hi >= min(W, H):
            raise ValidationError("arena is too small for the largest box")
        if self.layout == "lanes" and self._lane_height() - 2 * LANE_MARGIN < max(2, lo // 2):
            raise ValidationError("arena is too short to give every agent a lane")

    def _lane_height(self) -> int:
        return self.arena[1] // self.n_agents


@dataclass(frozen=True)
class NoiseParams:
    drop_rate: float = 0.0
    jitter_std: float = 0.0
    fp_rate: float = 0.0
    occlusion_gaps: tuple = ()  # (agent index, first frame, length)
    embedding_noise_std: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValidationError("drop_rate must be a probability")
        if self.jitter_std < 0 or self.fp_rate < 0 or self.embedding_noise_std < 0:
            raise ValidationError("noise magnitudes must be nonnegative")
        object.__setattr__(self, "occlusion_gaps", tuple(tuple(int(v) for v in g) for g in self.occlusion_gaps))


@dataclass
class Agent:
    index: int
    size: tuple  # (w, h)
    positions: np.ndarray  # (n_frames, 2) top-left corner per frame
    keypoint_offsets: np.ndarray  # (K, 2) relative to the top-left corner
    embedding: np.ndarray
    texture: np.ndarray = field(repr=False)

    @property
    def track_id(self) -> int:
        return self.index + 1

    def box(self, t: int) -> BBox:
        x, y = self.positions[t]
        return BBox(float(x), float(y), float(x + self.size[0]), float(y + self.size[1]))


def _quantize(v: float, q: float) -> float:
    return round(v / q) * q


def _bounce(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    nxt = pos + vel
    if nxt < lo:
        return 2 * lo - nxt, -vel
    if nxt > hi:
        return 2 * hi - nxt, -vel
    return nxt, vel


class Scenario:
    """Ground truth plus lazily rendered frames and exact flow fields.

    Frames are numbered 1..n_frames; agent i has track id i + 1.
    """

    def __init__(self, params: ScenarioParams, agents: list[Agent], background: np.ndarray):
        self.params = params
        self.agents = agents
        self.background = background

    @property
    def frames(self) -> range:
        return range(1, self.params.n_frames + 1)

    @property
    def embeddings(self) -> np.ndarray:
        return np.array([a.embedding for a in self.agents])

    def gt_tracks(self) -> list[TrackedBox]:
        out = [TrackedBox(frame=k, track_id=a.track_id, box=a.box(k - 1), score=1.0)
               for k in self.frames for a in self.agents]
        return out

    def gt_pose(self, agent: Agent, k: int) -> Pose:
        x, y = agent.positions[k - 1]
        kp = np.ones((self.params.K, 3))
        kp[:, 0] = x + agent.keypoint_offsets[:, 0]
        kp[:, 1] = y + agent.keypoint_offsets[:, 1]
        return Pose(frame=k, keypoints=kp, track_id=agent.track_id)

    def gt_poses(self) -> list[Pose]:
        return [self.gt_pose(a, k) for k in self.frames for a in self.agents]

    def _footprint(self, agent: Agent, t: int) -> tuple[slice, slice]:
        W, H = self.params.arena
        b = agent.box(t)
        x0 = max(int(math.floor(b.x1)) - 1, 0)
        x1 = min(int(math.ceil(b.x2)) + 1, W - 1)
        y0 = max(int(math.floor(b.y1)) - 1, 0)
        y1 = min(int(math.ceil(b.y2)) + 1, H - 1)
        return slice(y0, y1 + 1), slice(x0, x1 + 1)

    def flow(self, src: int, dst: int) -> FlowField:
        """Exact displacement field taking frame ``src`` onto frame ``dst``."""
        for k in (src, dst):
            if k not in self.frames:
                raise ValidationError(f"frame {k} outside 1..{self.params.n_frames}")
        W, H = self.params.arena
        data = np.zeros((H, W, 2), dtype=np.float32)
        for a in self.agents:
            d = a.positions[dst - 1] - a.positions[src - 1]
            ys, xs = self._footprint(a, src - 1)
            data[ys, xs, 0] = d[0]
            data[ys, xs, 1] = d[1]
        return FlowField(data)

    def frame(self, k: int) -> GrayFrame:
        img = self.background.copy()
        W, H = self.params.arena
        for a in self.agents:
            x, y = a.positions[k - 1]
            w, h = a.size
            px0, py0 = int(math.floor(x)), int(math.floor(y))
            xs0, ys0 = max(px0, 0), max(py0, 0)
            xs1, ys1 = min(px0 + int(w), W), min(py0 + int(h), H)
            img[ys0:ys1, xs0:xs1] = a.texture[ys0 - py0:ys1 - py0, xs0 - px0:xs1 - px0]
        return GrayFrame(img)


def generate(p: ScenarioParams) -> Scenario:
    if p.n_agents > p.embedding_dim:
        raise ValidationError(
            f"{p.n_agents} agents cannot get orthogonal embeddings in dimension {p.embedding_dim}")
    rng = _rng(p.seed)
    W, H = p.arena
    q = p.velocity_quantum
    background = rng.uniform(0.0, 0.3, size=(H, W)).astype(np.float32)
    basis, _ = np.linalg.qr(rng.standard_normal((p.embedding_dim, p.embedding_dim)))

    agents = []
    lo_s, hi_s = p.box_size_range
    for i in range(p.n_agents):
        h = int(rng.integers(lo_s, hi_s + 1))
        if p.layout == "lanes":
            lane = p._lane_height()
            y_lo = i * lane + LANE_MARGIN
            y_hi_edge = (i + 1) * lane - LANE_MARGIN
            h = min(h, y_hi_edge - y_lo - 1)
        else:
            y_lo, y_hi_edge = 0, H
        w = max(2, h // 2)
        x_lo, x_hi = 0.0, float(W - w)
        y_hi = float(y_hi_edge - h)
        x = float(rng.integers(0, int(x_hi) + 1))
        y = float(rng.integers(y_lo, int(y_hi) + 1))
        speed = rng.uniform(*p.speed_range)
        theta = rng.uniform(0.0, 2 * math.pi)
        vx = _quantize(speed * math.cos(theta), q)
        vy = _quantize(speed * math.sin(theta), q)
        # a velocity larger than the free range would bounce more than once per step
        vx = math.copysign(min(abs(vx), max(x_hi - x_lo, 0.0)), vx)
        vy = math.copysign(min(abs(vy), max(y_hi - y_lo, 0.0)), vy)
        pos = np.empty((p.n_frames, 2))
        for t in range(p.n_frames):
            pos[t] = (x, y)
            x, vx = _bounce(x, vx, x_lo, x_hi)
            y, vy = _bounce(y, vy, float(y_lo), y_hi)
        offsets = np.empty((p.K, 2))
        offsets[:, 0] = np.round(rng.uniform(0.1, 0.9, p.K) * 16) / 16 * w
        offsets[:, 1] = np.round(rng.uniform(0.1, 0.9, p.K) * 16) / 16 * h
        texture = rng.uniform(0.4, 1.0, size=(h, w)).astype(np.float32)
        agents.append(Agent(i, (w, h), pos, offsets, basis[:, i].copy(), texture))
    return Scenario(p, agents, background)


def _occluded(noise: NoiseParams, agent: int, k: int) -> bool:
    return any(a == agent and start <= k < start + length for a, start, length in noise.occlusion_gaps)


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def corrupt(scenario: Scenario, noise: NoiseParams = NoiseParams(), seed: int = 0):
    """Degrade ground truth into detector-like input.

    Returns ``(detections, poses)``: detections carry embeddings (per frame:
    surviving agents in index order, then spurious boxes); poses are the
    jittered ground-truth poses of surviving agents, without track ids.
    """
    p = scenario.params
    rng = _rng(seed)
    W, H = p.arena
    dets: list[Detection] = []
    poses: list[Pose] = []
    for k in scenario.frames:
        gt_boxes = []
        for a in scenario.agents:
            box = a.box(k - 1)
            gt_boxes.append(box)
            if _occluded(noise, a.index, k):
                continue
            if noise.drop_rate > 0 and rng.random() < noise.drop_rate:
                continue
            if noise.jitter_std > 0:
                c = box.as_array() + rng.normal(0.0, noise.jitter_std, 4)
                c[2] = max(c[2], c[0] + 1.0)
                c[3] = max(c[3], c[1] + 1.0)
                box = BBox(*c)
            emb = a.embedding
            if noise.embedding_noise_std > 0:
                emb = emb + rng.normal(0.0, noise.embedding_noise_std, emb.shape)
                emb = emb / np.linalg.norm(emb)
            dets.append(Detection(frame=k, box=box, score=1.0, embedding=emb))
            pose = scenario.gt_pose(a, k)
            kp = np.array(pose.keypoints)
            if noise.jitter_std > 0:
                kp[:, :2] += rng.normal(0.0, noise.jitter_std, (p.K, 2))
            poses.append(Pose(frame=k, keypoints=kp))
        n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0 else 0
        for _ in range(n_fp):
            for _attempt in range(100):
                h = float(rng.integers(p.box_size_range[0], p.box_size_range[1] + 1))
                w = max(2.0, h // 2)
                x = float(rng.uniform(0, W - w))
                y = float(rng.uniform(0, H - h))
                box = BBox(x, y, x + w, y + h)
                if all(iou(box, g) < FP_MAX_IOU for g in gt_boxes):
                    dets.append(Detection(frame=k, box=box, score=float(rng.uniform(0.1, 0.6)),
                                          embedding=_random_unit(rng, p.embedding_dim)))
                    break
    return dets, poses


def write_scenario(out_dir, scenario: Scenario, noise: NoiseParams = NoiseParams(), noise_seed: int = 0,
                   with_flows: bool = True, with_frames: bool = True) -> dict:
    """Write a self-contained scenario directory and return its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dets, poses = corrupt(scenario, noise, noise_seed)
    files = {
        "gt.txt": write_mot(scenario.gt_tracks()),
        "det.txt": write_mot(dets),
        "emb.bin": write_embeddings(np.array([d.embedding for d in dets]).reshape(len(dets), scenario.params.embedding_dim)),
        "gt_poses.jsonl": write_pose_records(scenario.gt_poses()),
        "poses.jsonl": write_pose_records(poses),
    }
    if with_flows:
        for k in scenario.frames:
            if k + 1 in scenario.frames:
                files[f"flows/{k}_{k + 1}.flo"] = write_flo(scenario.flow(k, k + 1))
                files[f"flows/{k + 1}_{k}.flo"] = write_flo(scenario.flow(k + 1, k))
    if with_frames:
        for k in scenario.frames:
            files[f"frames/{k:06d}.gray"] = write_gray(scenario.frame(k))
    manifest = {
        "scenario": asdict(scenario.params),
        "noise": asdict(noise),
        "noise_seed": noise_seed,
        "frames": [scenario.frames.start, scenario.frames.stop - 1],
        "files": sorted(files),
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    for name, data in files.items():
        atomic_write(out / name, data)
    return manifest
