from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import DEFAULT_CONFIG, MOVABLE_SHAPES, PALETTE, SHAPES, SOLID_SHAPES, SimConfig

Vec = tuple[float, float]


@dataclass(frozen=True)
class ObjectState:
    id: int
    shape: str
    color: str
    pos: Vec
    size: float
    movable: bool
    art: float = 0.0  # drawer extension, button depression, container fill
    on: int | None = None  # id of the solid object this one is stacked on

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in PALETTE:
            raise ValueError(f"unknown color {self.color!r}")

    @property
    def rgb(self) -> tuple[int, int, int]:
        return PALETTE[self.color]

    @property
    def solid(self) -> bool:
        return self.shape in SOLID_SHAPES


@dataclass(frozen=True)
class SimState:
    gripper_pos: Vec
    gripper_closed: bool = False
    held_object: int | None = None
    objects: tuple[ObjectState, ...] = ()
    env_id: int = 0
    step_count: int = 0
    agent: str = "robot"  # "robot" or "human" (the non-robot sprite of the pretraining corpus)
    engaged_handle: int | None = None  # drawer id whose handle the gripper holds

    def obj(self, obj_id: int) -> ObjectState:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def by_color(self, color: str) -> ObjectState | None:
        for o in self.objects:
            if o.color == color:
                return o
        return None

    @property
    def articulations(self) -> list[float]:
        return [o.art for o in self.objects if o.shape in ("drawer", "button", "container")]

    def with_objects(self, objects) -> "SimState":
        return replace(self, objects=tuple(objects))


@dataclass(frozen=True)
class Action:
    dx: float = 0.0
    dy: float = 0.0
    grip: float = -1.0

    @classmethod
    def from_array(cls, a) -> "Action":
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def clamped(self) -> "Action":
        vals = []
        for v in (self.dx, self.dy, self.grip):
            v = float(v)
            if not math.isfinite(v):
                v = 0.0
            vals.append(min(1.0, max(-1.0, v)))
        return Action(*vals)

    def to_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.grip], dtype=np.float32)


NULL_ACTION = Action(0.0, 0.0, -1.0)


def dist(a: Vec, b: Vec) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def handle_pos(drawer: ObjectState) -> Vec:
    from .config import DRAWER_BASE_LEN, DRAWER_TRAVEL

    x, y = drawer.pos
    return (x + DRAWER_BASE_LEN + drawer.art * DRAWER_TRAVEL, y)


def validate_state(state: SimState, config: SimConfig = DEFAULT_CONFIG) -> list[str]:
    """Return invariant violations (empty when the state is valid)."""
    problems = []
    lo, hi = config.wall_margin - 1e-9, 1 - config.wall_margin + 1e-9
    for name, p in [("gripper", state.gripper_pos)] + [(f"obj{o.id}", o.pos) for o in state.objects]:
        if not (lo <= p[0] <= hi and lo <= p[1] <= hi):
            problems.append(f"{name} outside table")
    if state.held_object is not None:
        held = state.obj(state.held_object)
        if dist(held.pos, state.gripper_pos) > 1e-9:
            problems.append("held object not at gripper")
    solids = [o for o in state.objects if o.solid and o.id != state.held_object]
    for i, a in enumerate(solids):
        for b in solids[i + 1:]:
            if a.on == b.id or b.on == a.id:
                continue
            if dist(a.pos, b.pos) < (a.size + b.size) / 2 - config.penetration_tol:
                problems.append(f"objects {a.id},{b.id} overlap")
    for o in state.objects:
        if not 0.0 <= o.art <= 1.0:
            problems.append(f"obj{o.id} articulation out of range")
        if o.movable != (o.shape in MOVABLE_SHAPES):
            problems.append(f"obj{o.id} movable flag inconsistent")
    return problems
