"""Fixed slot encoder shared by every learned model, its renderer inverse, and instruction tokens.

A frame is decoded into one slot per object color (present, x, y, art) plus an
actor slot (present, x, y, closed, robot).  Shapes and sizes are static per
video and read from the first frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import AmbiguousFrame, ConfigError, ShapeMismatch
from .gridsim.config import (
    BAR_THICKNESS,
    DEFAULT_CONFIG,
    DRAWER_BASE_LEN,
    DRAWER_TRAVEL,
    MOVABLE_SHAPES,
    OBJECT_COLORS,
    SHAPES,
    SIZES,
)
from .gridsim.render import _ENVS, background, inverse_render, render
from .gridsim.state import ObjectState, SimState
from .gridsim.tasks import VERBS, Catalog, TaskSpec

N_SLOTS = len(OBJECT_COLORS)
OBJ_DYN = 4  # present, x, y, art
ACTOR_DIM = 5  # present, x, y, closed, robot
N_SHAPES = len(SHAPES)


@dataclass
class SceneStatics:
    """Per-video constants: shape and size for each color slot, plus the environment id."""

    shapes: list  # str or None per slot
    sizes: np.ndarray
    env_id: int

    def shape_onehot(self) -> np.ndarray:
        out = np.zeros((N_SLOTS, N_SHAPES), np.float32)
        for i, s in enumerate(self.shapes):
            if s is not None:
                out[i, SHAPES.index(s)] = 1.0
        return out


@dataclass
class SlotVideo:
    objs: np.ndarray  # (T, N_SLOTS, OBJ_DYN)
    actor: np.ndarray  # (T, ACTOR_DIM)
    statics: SceneStatics

    def __len__(self):
        return len(self.objs)

    def flat(self) -> np.ndarray:
        """(T, D) per-frame feature rows: dynamic slots, actor, static shape one-hots."""
        T = len(self.objs)
        shapes = np.broadcast_to(self.statics.shape_onehot().reshape(1, -1), (T, N_SLOTS * N_SHAPES))
        return np.concatenate([self.objs.reshape(T, -1), self.actor, shapes], axis=1).astype(np.float32)


FLAT_DIM = N_SLOTS * OBJ_DYN + ACTOR_DIM + N_SLOTS * N_SHAPES


def infer_env(frame: np.ndarray) -> int:
    """Environment whose background agrees with the most pixels of ``frame``."""
    best, best_n = 0, -1
    for env_id in sorted(_ENVS):
        n = int(np.all(frame == background(env_id, frame.shape[1]), axis=-1).sum())
        if n > best_n:
            best, best_n = env_id, n
    return best


def _size_from(ent, raster: int) -> float:
    if ent.shape == "drawer":
        return DRAWER_BASE_LEN
    if ent.shape == "bar":
        return ent.width / raster
    if ent.shape == "button":
        return SIZES["button"]
    return max(ent.width, ent.height) / raster


def scene_statics(frame: np.ndarray) -> SceneStatics:
    d = inverse_render(frame)
    shapes, sizes = [None] * N_SLOTS, np.zeros(N_SLOTS, np.float32)
    for c, e in d.entities.items():
        if c in OBJECT_COLORS:
            i = OBJECT_COLORS.index(c)
            shapes[i], sizes[i] = e.shape, _size_from(e, frame.shape[1])
    return SceneStatics(shapes, sizes, infer_env(frame))


def encode_frame(frame: np.ndarray, statics: SceneStatics, prev=None):
    """Slot arrays for one frame; an undecodable frame repeats ``prev`` (or zeros)."""
    shapes = {c: s for c, s in zip(OBJECT_COLORS, statics.shapes) if s is not None}
    objs = np.zeros((N_SLOTS, OBJ_DYN), np.float32)
    actor = np.zeros(ACTOR_DIM, np.float32)
    try:
        d = inverse_render(frame, shapes)
    except AmbiguousFrame:
        if prev is not None:
            return prev[0].copy(), prev[1].copy()
        return objs, actor
    for c, e in d.entities.items():
        if c not in OBJECT_COLORS:
            continue
        i = OBJECT_COLORS.index(c)
        objs[i] = (1.0, e.pos[0], e.pos[1], e.art)
    if d.gripper_pos is not None:
        actor[:] = (1.0, d.gripper_pos[0], d.gripper_pos[1], float(d.gripper_closed), float(d.agent == "robot"))
    return objs, actor


def encode_video(frames) -> SlotVideo:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ShapeMismatch(f"expected (T, H, W, 3) video, got {frames.shape}")
    statics = scene_statics(frames[0])
    objs, actors = [], []
    prev = None
    for f in frames:
        prev = encode_frame(f, statics, prev)
        objs.append(prev[0])
        actors.append(prev[1])
    return SlotVideo(np.stack(objs), np.stack(actors), statics)


def slots_to_state(objs: np.ndarray, actor: np.ndarray, statics: SceneStatics) -> SimState:
    """Approximate SimState whose rendering reproduces the slot configuration."""
    out = []
    for i, (c, shape) in enumerate(zip(OBJECT_COLORS, statics.shapes)):
        if shape is None or objs[i, 0] < 0.5:
            continue
        x, y = float(objs[i, 1]), float(objs[i, 2])
        art = float(np.clip(objs[i, 3], 0.0, 1.0))
        if shape == "drawer":
            x -= (DRAWER_BASE_LEN + art * DRAWER_TRAVEL) / 2  # slot holds the box center
        size = float(statics.sizes[i]) or SIZES.get(shape, 0.16)
        out.append(ObjectState(len(out), shape, c, (x, y), size, shape in MOVABLE_SHAPES, art=art))
    closed = bool(actor[3] > 0.5)
    agent = "robot" if actor[4] > 0.5 else "human"
    return SimState(gripper_pos=(float(actor[1]), float(actor[2])), gripper_closed=closed,
                    objects=tuple(out), env_id=statics.env_id, agent=agent)


def render_slots(objs, actor, statics: SceneStatics, raster: int = DEFAULT_CONFIG.raster) -> np.ndarray:
    return render(slots_to_state(objs, actor, statics), raster=raster)


# ---------------------------------------------------------------- instructions

COLOR_TOKENS = tuple(OBJECT_COLORS) + ("none",)
SHAPE_TOKENS = tuple(SHAPES) + ("none",)
TOKEN_SIZES = (len(VERBS), len(COLOR_TOKENS), len(SHAPE_TOKENS), len(COLOR_TOKENS), len(SHAPE_TOKENS))


class InstructionEncoding:
    """Maps instructions to (verb, object color, object shape, target color, target shape) token ids."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._by_text: dict[str, tuple] = {}
        self._ids: dict[tuple, int] = {}
        for tid in sorted(catalog.tasks):
            task = catalog.tasks[tid]
            tok = self.tokens_of(task)
            prev = self._by_text.setdefault(task.instruction, tok)
            if prev != tok:
                raise ConfigError(f"instruction {task.instruction!r} maps to two token tuples")
            self._ids.setdefault(tok, len(self._ids))

    @staticmethod
    def tokens_of(task: TaskSpec) -> tuple[int, int, int, int, int]:
        v, oc, os_, tc, ts = task.tokens()
        return (VERBS.index(v), COLOR_TOKENS.index(oc), SHAPE_TOKENS.index(os_),
                COLOR_TOKENS.index(tc), SHAPE_TOKENS.index(ts))

    def tokens(self, instruction) -> tuple[int, int, int, int, int]:
        if isinstance(instruction, TaskSpec):
            return self.tokens_of(instruction)
        try:
            return self._by_text[instruction]
        except KeyError:
            raise ConfigError(f"instruction not in catalog: {instruction!r}") from None

    def instruction_id(self, instruction) -> int:
        return self._ids[self.tokens(instruction)]

    def batch(self, instructions) -> np.ndarray:
        return np.array([self.tokens(i) for i in instructions], dtype=np.int64).reshape(-1, len(TOKEN_SIZES))
