"""Rasterizer and its exact inverse for palette-colored scenes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..exceptions import AmbiguousFrame
from .config import (
    BAR_THICKNESS,
    COLOR_NAMES,
    DEFAULT_CONFIG,
    DRAWER_BASE_LEN,
    DRAWER_HEIGHT,
    DRAWER_TRAVEL,
    PALETTE,
    PALETTE_ARRAY,
    SIZES,
    EnvSpec,
    SimConfig,
    px,
)
from .state import ObjectState, SimState, handle_pos

DEFAULT_ENVS = {
    0: EnvSpec(0, (40, 40, 40)),
    1: EnvSpec(1, (90, 70, 50), n_distractors=1),
    2: EnvSpec(2, (50, 70, 90), tile=(60, 80, 100), n_distractors=1),
    3: EnvSpec(3, (100, 100, 100), n_distractors=2),
    4: EnvSpec(4, (30, 60, 40), tile=(40, 70, 50), n_distractors=2),
}

_ENVS = dict(DEFAULT_ENVS)


def register_envs(envs):
    for e in envs:
        _ENVS[e.env_id] = e


def env_spec(env_id: int) -> EnvSpec:
    return _ENVS.get(env_id, DEFAULT_ENVS[0])


def background(env_id: int, raster: int) -> np.ndarray:
    env = env_spec(env_id)
    frame = np.empty((raster, raster, 3), dtype=np.uint8)
    frame[:] = env.background
    if env.tile is not None:
        yy, xx = np.mgrid[0:raster, 0:raster]
        mask = ((yy // 4) + (xx // 4)) % 2 == 1
        frame[mask] = env.tile
    return frame


def _origin(c: float, n: int, raster: int) -> int:
    return int(round(c * raster - n / 2))


def _paint(frame, mask, x0, y0, rgb):
    h, w = mask.shape
    H, W = frame.shape[:2]
    ys, xs = np.nonzero(mask)
    ys = ys + y0
    xs = xs + x0
    keep = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
    frame[ys[keep], xs[keep]] = rgb


def _box(w, h):
    return np.ones((h, w), dtype=bool)


def _disc(n):
    c = (n - 1) / 2
    yy, xx = np.mgrid[0:n, 0:n]
    return (yy - c) ** 2 + (xx - c) ** 2 <= (n / 2) ** 2 - 0.5


def _outline(n):
    m = np.ones((n, n), dtype=bool)
    m[1:-1, 1:-1] = False
    return m


def sprite_size(obj: ObjectState, raster: int) -> int:
    return px(obj.size, raster)


def _draw_object(frame, obj: ObjectState, raster: int):
    rgb = PALETTE[obj.color]
    x, y = obj.pos
    if obj.shape == "drawer":
        h = px(DRAWER_HEIGHT, raster)
        c0 = int(round(x * raster))
        c1 = int(round(handle_pos(obj)[0] * raster))
        y0 = _origin(y, h, raster)
        _paint(frame, _box(max(1, c1 - c0), h), c0, y0, rgb)
        return
    if obj.shape == "bar":
        w, h = px(obj.size, raster), px(BAR_THICKNESS, raster)
        _paint(frame, _box(w, h), _origin(x, w, raster), _origin(y, h, raster), rgb)
        return
    if obj.shape == "button":
        if obj.art >= 0.5:
            n = px(SIZES["button_pressed"], raster)
            mask = _box(n, n)
        else:
            n = px(obj.size, raster)
            mask = _box(n, n)
            mask[n // 2, n // 2] = False
        _paint(frame, mask, _origin(x, n, raster), _origin(y, n, raster), rgb)
        return
    n = px(obj.size, raster)
    x0, y0 = _origin(x, n, raster), _origin(y, n, raster)
    if obj.shape == "container":
        _paint(frame, _outline(n), x0, y0, rgb)
        inner = n - 2
        rows = int(round(obj.art * inner))
        if rows > 0:
            _paint(frame, _box(inner, rows), x0 + 1, y0 + 1 + inner - rows, PALETTE["liquid"])
        return
    mask = _disc(n) if obj.shape == "disc" else _box(n, n)
    _paint(frame, mask, x0, y0, rgb)


def visual_center(obj: ObjectState) -> tuple[float, float]:
    """Reference point the decoder reports for ``obj`` (the sprite's box center)."""
    if obj.shape == "drawer":
        return ((obj.pos[0] + handle_pos(obj)[0]) / 2, obj.pos[1])
    return obj.pos


def gripper_mask(closed: bool, raster: int) -> np.ndarray:
    n = px(SIZES["gripper_closed" if closed else "gripper_open"], raster)
    m = np.zeros((n, n), dtype=bool)
    m[:, 0] = True
    m[:, -1] = True
    return m


def render(state: SimState, config: SimConfig = DEFAULT_CONFIG, raster: int | None = None) -> np.ndarray:
    """Rasterize a state to an H x W x 3 uint8 frame."""
    raster = raster or config.raster
    frame = background(state.env_id, raster)
    order = sorted(state.objects, key=lambda o: o.id)
    for obj in order:
        _draw_object(frame, obj, raster)
    m = gripper_mask(state.gripper_closed, raster)
    n = m.shape[0]
    color = "gripper" if state.agent == "robot" else "agent"
    gx, gy = state.gripper_pos
    _paint(frame, m, _origin(gx, n, raster), _origin(gy, n, raster), PALETTE[color])
    return frame


@dataclass
class DecodedEntity:
    color: str
    pos: tuple[float, float]
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 inclusive
    mass: int
    shape: str
    art: float = 0.0
    confidence: float = 1.0

    @property
    def width(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1

    @property
    def height(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def handle(self) -> tuple[float, float]:
        return ((self.bbox[3] + 1) / self._raster, self.pos[1])

    @property
    def base(self) -> tuple[float, float]:
        return (self.bbox[1] / self._raster, self.pos[1])

    _raster: int = 32


@dataclass
class DecodedState:
    raster: int
    entities: dict[str, DecodedEntity] = field(default_factory=dict)
    gripper_pos: tuple[float, float] | None = None
    gripper_closed: bool = False
    agent: str | None = None  # "robot" / "human" / None when no actor visible

    @property
    def empty(self) -> bool:
        return not self.entities and self.gripper_pos is None


def classify_shape(w: int, h: int, mass: int, raster: int = 32) -> str:
    """Best-effort sprite class; height is reliable under finger occlusion, width is not."""
    if h >= px(SIZES["container"], raster) - 1:
        return "container" if mass < 0.6 * w * h else "lid"
    if h == px(SIZES["lid"], raster):
        return "lid"
    if h == px(BAR_THICKNESS, raster):
        return "bar"
    if h == px(DRAWER_HEIGHT, raster):
        if w == h and mass == w * h:
            return "button"
        return "drawer"
    n = px(SIZES["button"], raster)
    if w == h == n and mass == n * n - 1:
        return "button"
    if w == h and mass < 0.9 * w * h:
        return "disc"
    return "square"


def _art(shape: str, ent_w: int, ent_h: int, raster: int) -> float:
    if shape == "drawer":
        length = ent_w / raster
        return float(np.clip((length - DRAWER_BASE_LEN) / DRAWER_TRAVEL, 0.0, 1.0))
    if shape == "button":
        return 1.0 if max(ent_w, ent_h) <= px(SIZES["button_pressed"], raster) else 0.0
    return 0.0


def _check_ambiguous(color, labels, n, raster):
    if n < 2:
        return
    masses = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    slices = ndimage.find_objects(labels)
    gap = px(SIZES["container"], raster)
    for i in range(n):
        for j in range(i + 1, n):
            if masses[i] != masses[j]:
                continue
            a, b = slices[i], slices[j]
            dy = max(a[0].start - b[0].stop, b[0].start - a[0].stop, 0)
            dx = max(a[1].start - b[1].stop, b[1].start - a[1].stop, 0)
            if max(dx, dy) >= gap:
                raise AmbiguousFrame(f"two separated {color} blobs of mass {int(masses[i])}")


_EIGHT = np.ones((3, 3), dtype=bool)


def inverse_render(frame: np.ndarray, shapes: dict[str, str] | None = None) -> DecodedState:
    """Recover entity geometry from a rendered frame by palette-color extraction.

    ``shapes`` optionally fixes the shape per color (e.g. taken from an
    unoccluded first frame) instead of classifying from the current geometry.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 frame, got {frame.shape}")
    raster = frame.shape[1]
    codes = _color_codes(frame)
    out = DecodedState(raster=raster)
    present = np.unique(codes)
    actor_codes = [COLOR_NAMES.index("gripper"), COLOR_NAMES.index("agent")]
    actor = np.isin(codes, actor_codes) if np.isin(present, actor_codes).any() else None
    liquid = None
    for k in present:
        if k < 0:
            continue
        color = COLOR_NAMES[k]
        mask = codes == k
        if actor is not None and color not in ("gripper", "agent"):
            mask = _unocclude(mask, actor)
        labels, n = ndimage.label(mask, structure=_EIGHT)
        _check_ambiguous(color, labels, n, raster)
        rows = np.nonzero(mask.any(1))[0]
        cols = np.nonzero(mask.any(0))[0]
        r0, r1, c0, c1 = int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])
        w, h = c1 - c0 + 1, r1 - r0 + 1
        mass = int(mask.sum())
        pos = ((c0 + c1 + 1) / 2 / raster, (r0 + r1 + 1) / 2 / raster)
        if color in ("gripper", "agent"):
            out.gripper_pos = pos
            out.gripper_closed = w <= px(SIZES["gripper_closed"], raster)
            out.agent = "robot" if color == "gripper" else "human"
            continue
        if color == "liquid":
            liquid = (pos, h)
            continue
        shape = (shapes or {}).get(color) or classify_shape(w, h, mass, raster)
        ent = DecodedEntity(color, pos, (r0, c0, r1, c1), mass, shape,
                            _art(shape, w, h, raster), confidence=1.0 / n)
        ent._raster = raster
        out.entities[color] = ent
    if out.gripper_pos is not None and out.gripper_closed:
        _snap_drawers(out, raster)
    if liquid is not None:
        lpos, rows = liquid
        best = None
        for ent in out.entities.values():
            if ent.shape == "container":
                d = abs(ent.pos[0] - lpos[0])
                if best is None or d < best[0]:
                    best = (d, ent)
        if best is not None:
            inner = best[1].height - 2
            best[1].art = float(min(1.0, rows / max(inner, 1)))
    return out


def _snap_drawers(out: DecodedState, raster: int):
    """A closed gripper sitting on a drawer's end hides its last columns; use the gripper x instead."""
    gx, gy = out.gripper_pos
    gc = gx * raster
    for ent in out.entities.values():
        if ent.shape != "drawer" or not (ent.bbox[0] <= gy * raster <= ent.bbox[2] + 1):
            continue
        if ent.bbox[1] < gc and abs(gc - (ent.bbox[3] + 1)) <= 2.5:
            length = gc / raster - ent.base[0]
            ent.art = float(np.clip((length - DRAWER_BASE_LEN) / DRAWER_TRAVEL, 0.0, 1.0))
            c1 = max(ent.bbox[3], int(round(gc)) - 1)
            ent.bbox = (ent.bbox[0], ent.bbox[1], ent.bbox[2], c1)
            ent.pos = ((ent.bbox[1] + c1 + 1) / 2 / raster, ent.pos[1])


def _unocclude(mask: np.ndarray, actor: np.ndarray) -> np.ndarray:
    """Fill actor pixels that have this color on both horizontal sides (a finger inside a sprite)."""
    left = np.zeros_like(mask)
    right = np.zeros_like(mask)
    left[:, 1:] = mask[:, :-1]
    right[:, :-1] = mask[:, 1:]
    return mask | (actor & left & right)


def _color_codes(frame: np.ndarray) -> np.ndarray:
    """Palette index per pixel, -1 for background."""
    flat = frame.reshape(-1, 3).astype(np.int32)
    key = (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]
    pal = PALETTE_ARRAY.astype(np.int32)
    pkey = (pal[:, 0] << 16) | (pal[:, 1] << 8) | pal[:, 2]
    order = np.argsort(pkey)
    sorted_keys = pkey[order]
    idx = np.searchsorted(sorted_keys, key)
    idx = np.clip(idx, 0, len(sorted_keys) - 1)
    hit = sorted_keys[idx] == key
    codes = np.where(hit, order[idx], -1)
    return codes.reshape(frame.shape[:2])
