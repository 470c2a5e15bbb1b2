"""Task catalog, graded success predicates and randomized scene construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, Unreachable
from .config import (
    DEFAULT_CONFIG,
    DRAWER_BASE_LEN,
    DRAWER_TRAVEL,
    MOVABLE_SHAPES,
    OBJECT_COLORS,
    SIZES,
    EnvSpec,
    SimConfig,
)
from .render import DecodedState, register_envs
from .state import ObjectState, SimState, dist, handle_pos

VERBS = (
    "pick_place", "push", "open_drawer", "close_drawer", "press_button",
    "stack", "pour", "cover", "uncover",
)

HOLD_TOL = 0.045
REACH_TOL = 0.06
AWAY_DIST = 0.15
DRAWER_OPEN = 0.85
DRAWER_CLOSED = 0.15


@dataclass(frozen=True)
class Query:
    color: str
    shape: str

    def matches(self, color, shape) -> bool:
        return color == self.color and (shape is None or shape == self.shape)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    verb: str
    object_query: Query
    target_query: Query | None
    env_id: int = 0
    instruction_template: str = ""
    partial_credit: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ConfigError(f"unknown verb {self.verb!r}")
        scores = [s for _, s in self.partial_credit]
        if any(b <= a for a, b in zip(scores, scores[1:])) or (scores and scores[-1] != 1.0):
            raise ConfigError(f"{self.task_id}: partial credit must increase strictly to 1.0")

    @property
    def success_fn(self) -> str:
        return self.partial_credit[-1][0]

    @property
    def instruction(self) -> str:
        tgt = self.target_query
        return self.instruction_template.format(
            obj=f"{self.object_query.color} {self.object_query.shape}",
            target=f"{tgt.color} {tgt.shape}" if tgt else "",
        )

    def tokens(self) -> tuple[str, str, str, str, str]:
        t = self.target_query
        return (self.verb, self.object_query.color, self.object_query.shape,
                t.color if t else "none", t.shape if t else "none")

    def with_env(self, env_id: int) -> "TaskSpec":
        from dataclasses import replace
        return replace(self, env_id=env_id, task_id=f"{self.task_id.split('@')[0]}@env{env_id}")


@dataclass
class SceneView:
    """Geometry common to exact states and decoded frames; predicates read only this."""

    entities: dict[str, dict]
    gripper_pos: tuple[float, float] | None
    closed: bool
    held: str | None = None

    @classmethod
    def from_state(cls, s: SimState) -> "SceneView":
        ents = {}
        for o in s.objects:
            ents[o.color] = {"shape": o.shape, "pos": o.pos, "art": o.art,
                             "handle": handle_pos(o) if o.shape == "drawer" else None}
        held = s.obj(s.held_object).color if s.held_object is not None else None
        return cls(ents, s.gripper_pos, s.gripper_closed, held)

    @classmethod
    def from_decoded(cls, d: DecodedState) -> "SceneView":
        ents = {}
        for c, e in d.entities.items():
            ents[c] = {"shape": e.shape, "pos": e.pos, "art": e.art,
                       "handle": e.handle if e.shape == "drawer" else None}
        held = None
        if d.gripper_pos is not None and d.gripper_closed:
            best = HOLD_TOL
            for c, e in ents.items():
                if e["shape"] not in MOVABLE_SHAPES:
                    continue
                dd = dist(e["pos"], d.gripper_pos)
                if dd <= best:
                    held, best = c, dd
        return cls(ents, d.gripper_pos, d.gripper_closed, held)


def _ent(scene, q):
    if q is None:
        return None
    e = scene.entities.get(q.color)
    if e is None or (e["shape"] is not None and e["shape"] != q.shape):
        return None
    return e


def _p_held(scene, task):
    return _ent(scene, task.object_query) is not None and scene.held == task.object_query.color


def _p_placed(scene, task):
    o, t = _ent(scene, task.object_query), _ent(scene, task.target_query)
    return (o is not None and t is not None and scene.held != task.object_query.color
            and dist(o["pos"], t["pos"]) <= DEFAULT_CONFIG.place_tol)


def _p_removed(scene, task):
    o, t = _ent(scene, task.object_query), _ent(scene, task.target_query)
    return (o is not None and t is not None and scene.held != task.object_query.color
            and dist(o["pos"], t["pos"]) >= AWAY_DIST)


def _p_contact(scene, task):
    o = _ent(scene, task.object_query)
    return (o is not None and scene.gripper_pos is not None and scene.closed and scene.held is None
            and dist(o["pos"], scene.gripper_pos) <= DEFAULT_CONFIG.contact_dist + 0.02)


def _p_handle(scene, task):
    o = _ent(scene, task.object_query)
    return (o is not None and scene.gripper_pos is not None and scene.closed
            and dist(o["handle"], scene.gripper_pos) <= HOLD_TOL)


def _p_drawer_open(scene, task):
    o = _ent(scene, task.object_query)
    return o is not None and o["art"] >= DRAWER_OPEN


def _p_drawer_closed(scene, task):
    o = _ent(scene, task.object_query)
    return o is not None and o["art"] <= DRAWER_CLOSED


def _p_reach(scene, task):
    o = _ent(scene, task.object_query)
    return o is not None and scene.gripper_pos is not None and dist(o["pos"], scene.gripper_pos) <= REACH_TOL


def _p_pressed(scene, task):
    o = _ent(scene, task.object_query)
    return o is not None and o["art"] >= 0.5


def _p_filled(scene, task):
    t = _ent(scene, task.target_query)
    return t is not None and _ent(scene, task.object_query) is not None and t["art"] >= 0.99


PREDICATES = {
    "held": _p_held,
    "placed": _p_placed,
    "removed": _p_removed,
    "contact": _p_contact,
    "handle_grasped": _p_handle,
    "drawer_open": _p_drawer_open,
    "drawer_closed": _p_drawer_closed,
    "reached": _p_reach,
    "pressed": _p_pressed,
    "filled": _p_filled,
}

DEFAULT_CREDIT = {
    "pick_place": (("held", 0.5), ("placed", 1.0)),
    "push": (("contact", 0.5), ("placed", 1.0)),
    "open_drawer": (("handle_grasped", 0.5), ("drawer_open", 1.0)),
    "close_drawer": (("handle_grasped", 0.5), ("drawer_closed", 1.0)),
    "press_button": (("reached", 0.5), ("pressed", 1.0)),
    "stack": (("held", 0.5), ("placed", 1.0)),
    "pour": (("held", 0.5), ("filled", 1.0)),
    "cover": (("held", 0.5), ("placed", 1.0)),
    "uncover": (("held", 0.5), ("removed", 1.0)),
}

DEFAULT_TEMPLATES = {
    "pick_place": "pick up the {obj} and place it in the {target}",
    "push": "push the {obj} into the {target}",
    "open_drawer": "open the {obj}",
    "close_drawer": "close the {obj}",
    "press_button": "press the {obj}",
    "stack": "stack the {obj} on the {target}",
    "pour": "pour the {obj} into the {target}",
    "cover": "cover the {target} with the {obj}",
    "uncover": "take the {obj} off the {target}",
}


def as_scene(x) -> SceneView:
    if isinstance(x, SceneView):
        return x
    if isinstance(x, SimState):
        return SceneView.from_state(x)
    if isinstance(x, DecodedState):
        return SceneView.from_decoded(x)
    raise TypeError(type(x))


def check(task: TaskSpec, name: str, state) -> bool:
    return bool(PREDICATES[name](as_scene(state), task))


def is_success(task: TaskSpec, state) -> bool:
    return check(task, task.success_fn, state)


def credit(task: TaskSpec, state) -> float:
    """Highest satisfied partial-credit entry."""
    scene = as_scene(state)
    best = 0.0
    for name, score in task.partial_credit:
        if PREDICATES[name](scene, task):
            best = max(best, score)
    return best


# ---------------------------------------------------------------- catalog

@dataclass
class Catalog:
    envs: dict[int, EnvSpec]
    tasks: dict[str, TaskSpec] = field(default_factory=dict)

    def task(self, task_id: str) -> TaskSpec:
        base, _, env = task_id.partition("@env")
        t = self.tasks[base]
        return t.with_env(int(env)) if env else t

    def by_verb(self, verb: str) -> list[TaskSpec]:
        return [t for t in self.tasks.values() if t.verb == verb]

    def index(self, task: TaskSpec) -> int:
        return list(self.tasks).index(task.task_id.split("@")[0])


def _parse_query(d):
    if d is None:
        return None
    return Query(d["color"], d["shape"])


def load_catalog(path: str | Path | None = None) -> Catalog:
    """Load environments and tasks from a JSON (or YAML) catalog file.

    Keys: ``envs`` -> list of {env_id, background [r,g,b], tile [r,g,b]|null,
    n_distractors}; ``tasks`` -> list of {task_id, verb, object {color, shape},
    target {color, shape}|null, env_id, instruction_template?, partial_credit?
    [[predicate, score], ...]}.
    """
    if path is None:
        text = resources.files("neuraltraj.data").joinpath("catalog.json").read_text()
        raw = json.loads(text)
    else:
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".yaml", ".yml"):
            import yaml
            raw = yaml.safe_load(text)
        else:
            raw = json.loads(text)
    try:
        envs = {}
        for e in raw["envs"]:
            envs[int(e["env_id"])] = EnvSpec(int(e["env_id"]), tuple(e["background"]),
                                             tuple(e["tile"]) if e.get("tile") else None,
                                             int(e.get("n_distractors", 0)))
        tasks = {}
        for t in raw["tasks"]:
            verb = t["verb"]
            pc = t.get("partial_credit")
            pc = tuple((p, float(s)) for p, s in pc) if pc else DEFAULT_CREDIT[verb]
            for p, _ in pc:
                if p not in PREDICATES:
                    raise ConfigError(f"unknown predicate {p!r}")
            tasks[t["task_id"]] = TaskSpec(
                t["task_id"], verb, _parse_query(t["object"]), _parse_query(t.get("target")),
                int(t.get("env_id", 0)), t.get("instruction_template", DEFAULT_TEMPLATES[verb]), pc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed catalog: {exc}") from exc
    register_envs(envs.values())
    return Catalog(envs, tasks)


_DEFAULT = None


def default_catalog() -> Catalog:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_catalog()
    return _DEFAULT


# ---------------------------------------------------------------- scenes

def _size_for(shape: str, role: str) -> float:
    if shape == "square" and role == "stack_top":
        return SIZES["square_small"]
    if shape == "square" and role == "stack_base":
        return SIZES["square_large"]
    if shape == "drawer":
        return DRAWER_BASE_LEN
    return SIZES[shape]


def _seg_dist(p, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2))
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def _keepout(objs):
    """Points (with radii) that other entities must avoid."""
    pts = []
    for o in objs:
        if o.shape == "drawer":
            for k in np.linspace(0, 1, 5):
                pts.append(((o.pos[0] + DRAWER_BASE_LEN + k * DRAWER_TRAVEL, o.pos[1]), 0.12))
        else:
            pts.append((o.pos, max(o.size, 0.16) / 2 + 0.06))
    return pts


def _free(p, pts, r):
    return all(dist(p, q) >= r + rq for q, rq in pts)


def initial_state(task: TaskSpec, rng: np.random.Generator, agent: str = "robot",
                  env: EnvSpec | None = None, max_tries: int = 500) -> SimState:
    """Sample a randomized starting scene for ``task``."""
    from .render import env_spec

    env = env or env_spec(task.env_id)
    oq, tq = task.object_query, task.target_query
    if oq.color in ("gripper", "agent", "liquid"):
        raise ConfigError("reserved color used as object")
    for _ in range(max_tries):
        objs = []
        u = lambda lo=0.2, hi=0.8: float(rng.uniform(lo, hi))  # noqa: E731
        v = task.verb
        if v in ("open_drawer", "close_drawer"):
            objs.append(ObjectState(0, "drawer", oq.color, (u(0.14, 0.4), u(0.2, 0.8)),
                                    DRAWER_BASE_LEN, False, art=0.0 if v == "open_drawer" else 1.0))
        elif v == "press_button":
            objs.append(ObjectState(0, "button", oq.color, (u(), u()), SIZES["button"], False))
        else:
            tshape = tq.shape
            trole = "stack_base" if v == "stack" else "target"
            tpos = (u(), u())
            objs.append(ObjectState(0, tshape, tq.color, tpos, _size_for(tshape, trole),
                                    tshape in MOVABLE_SHAPES))
            if v == "uncover":
                opos = tpos
            else:
                opos = (u(), u())
                d = dist(opos, tpos)
                if d < 0.3 or (v == "push" and d > 0.5):
                    continue
                if v == "push":
                    ux, uy = (tpos[0] - opos[0]) / d, (tpos[1] - opos[1]) / d
                    back = (opos[0] - ux * 0.14, opos[1] - uy * 0.14)
                    if not (0.12 <= back[0] <= 0.88 and 0.12 <= back[1] <= 0.88):
                        continue
            orole = "stack_top" if v == "stack" else "object"
            objs.append(ObjectState(1, oq.shape, oq.color, opos, _size_for(oq.shape, orole),
                                    oq.shape in MOVABLE_SHAPES))
        used = {o.color for o in objs}
        pts = _keepout(objs)
        if v == "push":
            a, b = objs[1].pos, objs[0].pos
        ok = True
        spare = [c for c in OBJECT_COLORS if c not in used]
        for k in range(env.n_distractors):
            color = spare[int(rng.integers(len(spare)))]
            spare.remove(color)
            shape = ("square", "disc")[int(rng.integers(2))]
            for _ in range(50):
                p = (u(0.15, 0.85), u(0.15, 0.85))
                if not _free(p, pts, 0.1):
                    continue
                if v == "push" and _seg_dist(p, a, b) < 0.2:
                    continue
                break
            else:
                ok = False
                break
            obj = ObjectState(len(objs), shape, color, p, SIZES["square_small"], True)
            objs.append(obj)
            pts.append((p, 0.14))
        if not ok:
            continue
        for _ in range(50):
            g = (u(0.12, 0.88), u(0.12, 0.88))
            if _free(g, pts, 0.08):
                break
        else:
            continue
        return SimState(gripper_pos=g, objects=tuple(objs), env_id=env.env_id, agent=agent)
    raise Unreachable(f"could not sample a scene for {task.task_id}")


def resolve(task: TaskSpec, state: SimState, query: Query | None) -> ObjectState:
    for o in state.objects:
        if query is not None and o.color == query.color and o.shape == query.shape:
            return o
    raise Unreachable(f"{task.task_id}: nothing matches {query}")
