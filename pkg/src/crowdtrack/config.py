"""Flat ``section.key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .detpost import BoxSmoothParams, FusionParams, NmsParams
from .errors import ValidationError
from .flow import FlowParams
from .pose import PoseSmoothParams
from .synth import NoiseParams, ScenarioParams
from .tracker.deepsort import TrackerParams

STAGE_CHOICES = {
    "fuse": ("auto", "on", "off"),
    "nms": ("nms", "set_nms", "none"),
    "smooth_boxes": ("before_tracker", "after_tracker", "off"),
    "pose_smooth": ("on", "off"),
}


@dataclass
class Stages:
    fuse: str = "auto"
    nms: str = "nms"
    smooth_boxes: str = "before_tracker"
    pose_smooth: str = "on"


@dataclass
class EvalSettings:
    iou_threshold: float = 0.5
    oks_sigma: float = 0.1


@dataclass
class RunConfig:
    stages: Stages = field(default_factory=Stages)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    nms: NmsParams = field(default_factory=NmsParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    box_smooth: BoxSmoothParams = field(default_factory=BoxSmoothParams)
    pose_smooth: PoseSmoothParams = field(default_factory=PoseSmoothParams)
    flow: FlowParams = field(default_factory=FlowParams)
    eval: EvalSettings = field(default_factory=EvalSettings)
    synth: ScenarioParams = field(default_factory=ScenarioParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    grid: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for sec in dataclasses.fields(self):
            block = getattr(self, sec.name)
            if sec.name == "grid":
                for k, vals in block.items():
                    lines.append(f"grid.{k} = {','.join(str(v) for v in vals)}")
                continue
            for f in dataclasses.fields(block):
                lines.append(f"{sec.name}.{f.name} = {_fmt(getattr(block, f.name))}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ";".join(",".join(str(x) for x in t) for t in v)
        return ",".join(str(x) for x in v)
    return str(v)


def _convert(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "on", "off"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            if ";" in raw or key == "occlusion_gaps":
                return tuple(tuple(int(x) for x in part.split(",")) for part in raw.split(";") if part.strip())
            return tuple(float(x) if "." in x or "e" in x.lower() else int(x) for x in raw.split(","))
        return raw
    except ValueError:
        raise ValidationError(f"bad value {raw!r} for {key}") from None


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'section.key = value'")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def build_config(pairs: Mapping[str, str]) -> RunConfig:
    """Apply ``section.key -> raw value`` pairs onto the defaults."""
    cfg = RunConfig()
    updates: dict[str, dict] = {}
    for key, raw in pairs.items():
        if "." not in key:
            raise ValidationError(f"config key {key!r} needs a section prefix")
        sec, name = key.split(".", 1)
        if sec == "grid":
            cfg.grid[name] = [_convert(v, 0.0, key) for v in raw.split(",") if v.strip()]
            continue
        if sec not in {f.name for f in dataclasses.fields(cfg)}:
            raise ValidationError(f"unknown config section {sec!r}")
        block = getattr(cfg, sec)
        names = {f.name for f in dataclasses.fields(block)}
        if name not in names:
            raise ValidationError(f"unknown config key {key!r}")
        updates.setdefault(sec, {})[name] = _convert(raw, getattr(block, name), key)
    for sec, kw in updates.items():
        setattr(cfg, sec, dataclasses.replace(getattr(cfg, sec), **kw))
    for name, choices in STAGE_CHOICES.items():
        if getattr(cfg.stages, name) not in choices:
            raise ValidationError(f"stages.{name} must be one of {choices}")
    for axis, vals in cfg.grid.items():
        if axis in ("nn_budget", "max_age", "n_init"):
            cfg.grid[axis] = [int(v) for v in vals]
    return cfg


def load_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    pairs = parse_pairs(Path(path).read_text()) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return build_config(pairs)
