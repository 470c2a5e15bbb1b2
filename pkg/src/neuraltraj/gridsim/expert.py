"""Waypoint proportional controller that solves every catalog verb."""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import Unreachable
from .config import DEFAULT_CONFIG, DRAWER_BASE_LEN, DRAWER_TRAVEL, SimConfig
from .physics import speed_of, step
from .state import Action, SimState, dist, handle_pos
from .tasks import TaskSpec, is_success, resolve

OPEN, CLOSED = -1.0, 1.0


class _Runner:
    def __init__(self, state, config):
        self.state = state
        self.config = config
        self.actions: list[Action] = []

    def act(self, a: Action):
        self.actions.append(a)
        self.state = step(self.state, a, self.config)

    def move(self, wp, grip, max_steps=200):
        v = speed_of(self.state, self.config)
        for _ in range(max_steps):
            p = self.state.gripper_pos
            dx, dy = wp[0] - p[0], wp[1] - p[1]
            d = math.hypot(dx, dy)
            if d < 1e-9:
                return
            s = min(1.0, v / d) / v
            self.act(Action(dx * s, dy * s, grip))
        raise Unreachable(f"waypoint {wp} not reached")

    def dwell(self, n, grip):
        for _ in range(n):
            self.act(Action(0.0, 0.0, grip))


def _clip(p, lo=0.12, hi=0.88):
    return (min(hi, max(lo, p[0])), min(hi, max(lo, p[1])))


def _via(rng, a, b, sigma):
    f = rng.uniform(0.3, 0.7)
    return _clip((a[0] + f * (b[0] - a[0]) + rng.normal(0, sigma),
                  a[1] + f * (b[1] - a[1]) + rng.normal(0, sigma)))


def _retreat(rng, p, avoid=()):
    angles = rng.permutation(8) * (math.pi / 4)
    for ang in angles:
        q = (p[0] + 0.12 * math.cos(ang), p[1] + 0.12 * math.sin(ang))
        if q == _clip(q) and all(dist(q, a) > 0.1 for a in avoid):
            return q
    return _clip((p[0], p[1] - 0.12))


def _free_spot(rng, state, near, min_sep=0.22):
    for _ in range(400):
        q = (rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85))
        if dist(q, near) < 0.2 or dist(q, near) > 0.5:
            continue
        if all(dist(q, o.pos) >= min_sep for o in state.objects if o.shape != "drawer"):
            return q
    raise Unreachable("no free placement spot")


def _plan(task: TaskSpec, state: SimState, rng, config: SimConfig, use_via: bool) -> list[Action]:
    r = _Runner(state, config)
    sigma = config.expert_jitter
    obj = resolve(task, state, task.object_query)
    via = (lambda a, b: [_via(rng, a, b, sigma)]) if use_via else (lambda a, b: [])

    def go(wp, grip):
        for w in via(r.state.gripper_pos, wp):
            r.move(w, grip)
        r.move(wp, grip)

    v = task.verb
    if v in ("pick_place", "stack", "cover", "uncover", "pour"):
        tgt = resolve(task, state, task.target_query)
        start = obj.pos
        go(obj.pos, OPEN)
        r.dwell(2, CLOSED)
        if v == "uncover":
            dest = _free_spot(rng, state, tgt.pos)
        else:
            dest = tgt.pos
        go(dest, CLOSED)
        if v == "pour":
            while not is_success(task, r.state):
                r.dwell(1, CLOSED)
                if len(r.actions) > 3 * config.t_max:
                    raise Unreachable("pour did not fill")
            go(start, CLOSED)
        r.dwell(2, OPEN)
        r.move(_retreat(rng, r.state.gripper_pos, [o.pos for o in r.state.objects]), OPEN)
    elif v == "push":
        tgt = resolve(task, state, task.target_query)
        d = dist(obj.pos, tgt.pos)
        ux, uy = (tgt.pos[0] - obj.pos[0]) / d, (tgt.pos[1] - obj.pos[1]) / d
        approach = (obj.pos[0] - ux * 0.12, obj.pos[1] - uy * 0.12)
        go(approach, OPEN)
        r.dwell(1, CLOSED)
        r.move((tgt.pos[0] - ux * config.contact_dist, tgt.pos[1] - uy * config.contact_dist), CLOSED)
        r.dwell(1, OPEN)
        p = r.state.gripper_pos
        r.move(_clip((p[0] - ux * 0.1, p[1] - uy * 0.1)), OPEN)
    elif v in ("open_drawer", "close_drawer"):
        go(handle_pos(obj), OPEN)
        r.dwell(1, CLOSED)
        x0 = obj.pos[0] + DRAWER_BASE_LEN
        end = (x0 + DRAWER_TRAVEL, obj.pos[1]) if v == "open_drawer" else (x0, obj.pos[1])
        r.move(end, CLOSED)
        r.dwell(1, OPEN)
        p = r.state.gripper_pos
        r.move(_clip((p[0], p[1] + (0.12 if p[1] < 0.5 else -0.12))), OPEN)
    elif v == "press_button":
        go(obj.pos, OPEN)
        r.dwell(2, CLOSED)
        r.dwell(1, OPEN)
        r.move(_retreat(rng, r.state.gripper_pos, [o.pos for o in r.state.objects]), OPEN)
    else:  # pragma: no cover - verbs validated by TaskSpec
        raise Unreachable(v)
    r.dwell(2, OPEN)
    if not is_success(task, r.state):
        raise Unreachable(f"{task.task_id}: plan did not reach success")
    return r.actions


def scripted_expert(task: TaskSpec, state: SimState, rng_seed: int = 0,
                    config: SimConfig = DEFAULT_CONFIG) -> list[Action]:
    """Jittered waypoint demonstration ending in the task's success state (<= t_max actions)."""
    resolve(task, state, task.object_query)
    if task.target_query is not None:
        resolve(task, state, task.target_query)
    rng = np.random.default_rng(rng_seed)
    actions = None
    try:
        actions = _plan(task, state, rng, config, use_via=True)
    except Unreachable:
        actions = None
    if actions is None or len(actions) > config.t_max:
        actions = _plan(task, state, np.random.default_rng(rng_seed), config, use_via=False)
    if len(actions) > config.t_max:
        raise Unreachable(f"{task.task_id}: demonstration needs {len(actions)} > {config.t_max} steps")
    return actions
