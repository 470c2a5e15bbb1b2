"""Deterministic dynamics of the tabletop world."""

from __future__ import annotations

from dataclasses import replace

from .config import DEFAULT_CONFIG, DRAWER_BASE_LEN, DRAWER_TRAVEL, SimConfig
from .state import Action, ObjectState, SimState, dist, handle_pos


def _clamp(v, lo, hi):
    return min(hi, max(lo, v))


def speed_of(state: SimState, config: SimConfig = DEFAULT_CONFIG) -> float:
    return config.v_max if state.agent == "robot" else config.agent_speed


def _grasp_candidate(state: SimState, config: SimConfig):
    """Nearest movable object or drawer handle within the grasp radius."""
    best, best_d = None, config.grasp_radius + 1e-9
    for o in state.objects:
        if o.movable:
            p = o.pos
        elif o.shape == "drawer":
            p = handle_pos(o)
        else:
            continue
        d = dist(p, state.gripper_pos)
        if d <= best_d:
            best, best_d = o, d
    return best


def _blocked(objs: dict, moving: ObjectState, new_pos, config: SimConfig) -> bool:
    for o in objs.values():
        if o.id == moving.id or not o.solid or o.on == moving.id or moving.on == o.id:
            continue
        if dist(o.pos, new_pos) < (o.size + moving.size) / 2 - config.penetration_tol:
            return True
    return False


def step(state: SimState, action: Action, config: SimConfig = DEFAULT_CONFIG) -> SimState:
    a = action.clamped()
    closing = a.grip > 0
    objs = {o.id: o for o in state.objects}
    held, handle = state.held_object, state.engaged_handle

    # grip transitions happen at the current position, before motion
    if closing and not state.gripper_closed:
        cand = _grasp_candidate(state, config)
        if cand is not None:
            if cand.movable:
                held = cand.id
                objs[held] = replace(cand, pos=state.gripper_pos, on=None)
            else:
                handle = cand.id
    elif not closing and state.gripper_closed:
        if held is not None:
            obj = objs[held]
            support = None
            for o in objs.values():
                if o.id != held and o.solid and o.on is None and \
                        dist(o.pos, obj.pos) < (o.size + obj.size) / 2 - config.penetration_tol:
                    support = o.id
            objs[held] = replace(obj, on=support)
        held, handle = None, None

    # gripper motion
    v = speed_of(state, config)
    lo, hi = config.wall_margin, 1.0 - config.wall_margin
    gx = _clamp(state.gripper_pos[0] + a.dx * v, lo, hi)
    gy = _clamp(state.gripper_pos[1] + a.dy * v, lo, hi)

    if handle is not None:
        drawer = objs[handle]
        x0 = drawer.pos[0] + DRAWER_BASE_LEN
        ext = _clamp((gx - x0) / DRAWER_TRAVEL, 0.0, 1.0)
        drawer = replace(drawer, art=ext)
        objs[handle] = drawer
        gx, gy = handle_pos(drawer)
    gpos = (gx, gy)

    if held is not None:
        objs[held] = replace(objs[held], pos=gpos)

    if closing and held is None and handle is None:
        # closed empty gripper pushes movables along the contact normal
        for oid in sorted(objs):
            o = objs[oid]
            if not o.movable:
                continue
            d = dist(o.pos, gpos)
            if d >= config.contact_dist:
                continue
            if d < 1e-12:
                continue
            nx, ny = (o.pos[0] - gx) / d, (o.pos[1] - gy) / d
            new = (gx + nx * config.contact_dist, gy + ny * config.contact_dist)
            if not (lo <= new[0] <= hi and lo <= new[1] <= hi):
                continue
            if _blocked(objs, o, new, config):
                continue
            objs[oid] = replace(o, pos=new, on=None)

    for oid, o in list(objs.items()):
        if o.shape == "button" and closing and dist(o.pos, gpos) <= config.grasp_radius:
            objs[oid] = replace(o, art=1.0)

    # pouring: a held disc over a container fills it
    if held is not None and objs[held].shape == "disc":
        for oid, o in list(objs.items()):
            if o.shape == "container" and dist(o.pos, gpos) <= config.place_tol:
                objs[oid] = replace(o, art=min(1.0, o.art + config.pour_rate))

    return replace(
        state,
        gripper_pos=gpos,
        gripper_closed=closing,
        held_object=held,
        engaged_handle=handle,
        objects=tuple(objs[o.id] for o in state.objects),
        step_count=state.step_count + 1,
    )


def rollout_actions(state: SimState, actions, config: SimConfig = DEFAULT_CONFIG) -> list[SimState]:
    states = [state]
    for a in actions:
        if not isinstance(a, Action):
            a = Action.from_array(a)
        states.append(step(states[-1], a, config))
    return states


__all__ = ["step", "rollout_actions", "speed_of"]
