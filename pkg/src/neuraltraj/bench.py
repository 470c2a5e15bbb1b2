"""Video benchmark: instruction following and physics scored by decoding frames back to scene geometry."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import AmbiguousFrame, InsufficientVariants, LengthMismatch, TooShort, ZeroVariance
from .gridsim import inverse_render, is_success
from .gridsim.config import DEFAULT_CONFIG
from .gridsim.tasks import TaskSpec

log = logging.getLogger(__name__)

IF_WINDOW = 0.1
SPEED_TOL = 1.5  # pixels on top of the per-step speed limit
MOVE_TOL = 1.0  # pixels; smaller shifts are decode jitter
REACH = 3.0  # pixels between the actor and an entity's box that still count as contact
RULES = ("speed", "attribution", "conservation", "decodable")


def _frames(traj) -> np.ndarray:
    return np.asarray(getattr(traj, "frames", traj))


def decode_video(frames):
    """Decoded states per frame (None where decoding is ambiguous), shapes pinned from the first frame."""
    try:
        d0 = inverse_render(frames[0])
    except AmbiguousFrame:
        d0 = None
    shapes = {c: e.shape for c, e in d0.entities.items()} if d0 is not None else None
    out = [d0]
    for f in frames[1:]:
        try:
            out.append(inverse_render(f, shapes))
        except AmbiguousFrame:
            out.append(None)
    return out


def _pix(a, b, raster) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1]) * raster


def _speed_ok(d0, d1) -> bool:
    raster = d0.raster
    lim = DEFAULT_CONFIG.v_max * raster + SPEED_TOL
    if d0.gripper_pos is not None and d1.gripper_pos is not None:
        if _pix(d0.gripper_pos, d1.gripper_pos, raster) > lim:
            return False
    for c, e in d0.entities.items():
        e1 = d1.entities.get(c)
        if e1 is None:
            continue
        # partial occlusion shifts the visible centroid by up to half the change in box size
        slack = (abs(e.width - e1.width) + abs(e.height - e1.height)) / 2
        if _pix(e.pos, e1.pos, raster) > lim + slack:
            return False
    return True


def _near(grip, ent, raster) -> bool:
    if grip is None:
        return False
    gx, gy = grip[0] * raster, grip[1] * raster
    r0, c0, r1, c1 = ent.bbox
    dx = max(c0 - gx, 0.0, gx - (c1 + 1))
    dy = max(r0 - gy, 0.0, gy - (r1 + 1))
    return math.hypot(dx, dy) <= REACH


def _attribution_ok(d0, d1, moved_before: set) -> tuple[bool, set]:
    raster = d0.raster
    moved, ok = set(), True
    for c, e in d0.entities.items():
        e1 = d1.entities.get(c)
        if e1 is None or _pix(e.pos, e1.pos, raster) <= MOVE_TOL:
            continue
        moved.add(c)
        if not (_near(d0.gripper_pos, e, raster) or _near(d1.gripper_pos, e1, raster) or c in moved_before):
            ok = False
    return ok, moved


def _conservation_ok(d0, d1) -> bool:
    a, b = set(d0.entities), set(d1.entities)
    if a == b:
        return True
    # an entity may vanish under, or reappear from under, another entity it touches (lids, stacking)
    for c in a ^ b:
        src, other = (d0, d1) if c in a else (d1, d0)
        ent = src.entities[c]
        if not any(_overlap(ent, o) for k, o in other.entities.items() if k != c):
            return False
    return True


def _overlap(e, o) -> bool:
    r0, c0, r1, c1 = e.bbox
    s0, d0, s1, d1 = o.bbox
    return not (r1 < s0 - 1 or s1 < r0 - 1 or c1 < d0 - 1 or d1 < c0 - 1)


@dataclass
class PhysicsResult:
    score: float
    n_pairs: int
    failures: dict = field(default_factory=dict)  # rule -> failing pair count


def score_physics(traj) -> PhysicsResult:
    """Fraction of consecutive frame pairs that pass all four rules."""
    frames = _frames(traj)
    if len(frames) < 2:
        raise TooShort("physics scoring needs at least two frames")
    decoded = decode_video(frames)
    fails = Counter()
    n_ok, moved = 0, set()
    for d0, d1 in zip(decoded[:-1], decoded[1:]):
        if d0 is None or d1 is None:
            fails["decodable"] += 1
            moved = set()
            continue
        bad = []
        if not _speed_ok(d0, d1):
            bad.append("speed")
        ok, now = _attribution_ok(d0, d1, moved)
        moved = now
        if not ok:
            bad.append("attribution")
        if not _conservation_ok(d0, d1):
            bad.append("conservation")
        fails.update(bad)
        n_ok += not bad
    n = len(frames) - 1
    return PhysicsResult(n_ok / n, n, {r: fails.get(r, 0) for r in RULES})


@dataclass
class IFResult:
    score: int
    reason: str


def instruction_following(traj, task: TaskSpec) -> IFResult:
    """1 iff the task is satisfied in a decoded frame of the final window, was not already satisfied at
    the start, and the video is temporally continuous (no frame-to-frame jumps)."""
    frames = _frames(traj)
    decoded = decode_video(frames)
    if all(d is None or d.empty for d in decoded):
        return IFResult(0, "no entities decoded")
    if decoded[0] is not None and _satisfied(task, decoded[0]):
        return IFResult(0, "satisfied in the first frame")
    for d0, d1 in zip(decoded[:-1], decoded[1:]):
        if d0 is not None and d1 is not None and not _speed_ok(d0, d1):
            return IFResult(0, "discontinuous video")
    n = max(1, math.ceil(IF_WINDOW * len(frames)))
    window = [d for d in decoded[-n:] if d is not None]
    if not window:
        return IFResult(0, "final window undecodable")
    if any(_satisfied(task, d) for d in window):
        return IFResult(1, "success in final window")
    return IFResult(0, "task not satisfied in final window")


def _satisfied(task, d) -> bool:
    try:
        return bool(is_success(task, d))
    except Exception as exc:  # an entity the task names is not decodable
        log.debug("success check failed: %s", exc)
        return False


def score_instruction_following(traj, task: TaskSpec) -> int:
    res = instruction_following(traj, task)
    if not res.score:
        log.info("IF=0 for %s: %s", task.task_id, res.reason)
    return res.score


# ---------------------------------------------------------------- statistics

def aggregate(rows, key: str | None = None) -> float:
    """Arithmetic mean of numbers or of ``row[key]``."""
    vals = [float(r[key]) if key else float(r) for r in rows]
    if not vals:
        raise LengthMismatch("nothing to aggregate")
    return sum(vals) / len(vals)


def pearson(x, y) -> float:
    """Sample Pearson correlation."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series shapes differ: {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise LengthMismatch("pearson needs at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt((dx * dx).sum()), math.sqrt((dy * dy).sum())
    if sx < 1e-12 or sy < 1e-12:
        raise ZeroVariance("a series is constant")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


@dataclass
class VideoRecord:
    video_id: str
    prompt: str
    split: str
    IF: int
    PA: float
    reason: str = ""
    violations: dict = field(default_factory=dict)


@dataclass
class BenchReport:
    records: list[VideoRecord]
    splits: dict = field(default_factory=dict)

    @property
    def if_mean(self) -> float:
        return 100.0 * aggregate([r.IF for r in self.records])

    @property
    def pa_mean(self) -> float:
        return 100.0 * aggregate([r.PA for r in self.records])

    @property
    def bench_score(self) -> float:
        return (self.if_mean + self.pa_mean) / 2

    def summary(self) -> dict:
        return {"IF": self.if_mean, "PA": self.pa_mean, "bench": self.bench_score, "n": len(self.records),
                "splits": self.splits}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"summary": self.summary(),
                                          "records": [asdict(r) for r in self.records]}, indent=1))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["video_id", "prompt", "split", "IF", "PA", "reason"] + [f"fail_{r}" for r in RULES])
            for r in self.records:
                w.writerow([r.video_id, r.prompt, r.split, r.IF, f"{r.PA:.6f}", r.reason]
                           + [r.violations.get(k, 0) for k in RULES])


def score_videos(items) -> BenchReport:
    """``items``: iterable of (video_id, traj, task, split)."""
    recs = []
    for vid, traj, task, split in items:
        i = instruction_following(traj, task)
        p = score_physics(traj)
        recs.append(VideoRecord(vid, task.instruction, split, i.score, p.score, i.reason, p.failures))
    return BenchReport(recs, dict(Counter(r.split for r in recs)))


@dataclass
class CorrelationResult:
    names: list
    bench: list
    success: list
    r: float

    @property
    def n(self) -> int:
        return len(self.bench)


def bench_vs_policy_correlation(variants) -> CorrelationResult:
    """``variants``: dicts with name, IF and PA (percent or fraction), and policy success."""
    variants = list(variants)
    if len(variants) < 4:
        raise InsufficientVariants(f"need at least 4 world-model variants, got {len(variants)}")
    bench = [(v["IF"] + v["PA"]) / 2 for v in variants]
    succ = [v["success"] for v in variants]
    return CorrelationResult([v.get("name", str(i)) for i, v in enumerate(variants)], bench, succ,
                             pearson(bench, succ))
