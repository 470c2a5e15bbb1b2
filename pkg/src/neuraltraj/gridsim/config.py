"""Published dynamics constants, palette and sprite geometry for the tabletop simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SimConfig:
    raster: int = 32
    v_max: float = 0.05  # robot gripper speed, table units per step
    agent_speed: float = 0.04  # non-robot agent sprite speed
    grasp_radius: float = 0.04
    penetration_tol: float = 0.01
    wall_margin: float = 0.08
    contact_dist: float = 0.08  # closed empty gripper pushes movables within this distance
    t_max: int = 64
    expert_jitter: float = 0.1
    fps: int = 8
    pour_rate: float = 0.25
    place_tol: float = 0.06


DEFAULT_CONFIG = SimConfig()

# 12 colors, pairwise channel (L-inf) distance >= 64. The last three are reserved.
PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "orange": (255, 128, 0),
    "olive": (128, 128, 0),
    "teal": (0, 128, 128),
    "gripper": (255, 255, 255),
    "agent": (128, 0, 255),
    "liquid": (0, 128, 255),
}
COLOR_NAMES = list(PALETTE)
OBJECT_COLORS = COLOR_NAMES[:9]
RESERVED_COLORS = ("gripper", "agent", "liquid")
PALETTE_ARRAY = np.array([PALETTE[c] for c in COLOR_NAMES], dtype=np.uint8)

SHAPES = ("square", "disc", "bar", "container", "drawer", "button", "lid")
MOVABLE_SHAPES = ("square", "disc", "bar", "lid")
SOLID_SHAPES = MOVABLE_SHAPES

# sprite extents in table units (32px raster: 0.03125 per pixel)
SIZES = {
    "square": 0.16,
    "square_small": 0.125,
    "square_large": 0.19,
    "disc": 0.16,
    "bar": 0.19,
    "container": 0.28,
    "lid": 0.22,
    "button": 0.16,
    "button_pressed": 0.094,
    "gripper_open": 0.16,
    "gripper_closed": 0.094,
}
BAR_THICKNESS = 0.0625
DRAWER_HEIGHT = 0.094
DRAWER_BASE_LEN = 0.125
DRAWER_TRAVEL = 0.28


@dataclass(frozen=True)
class EnvSpec:
    env_id: int
    background: tuple[int, int, int]
    tile: tuple[int, int, int] | None = None
    n_distractors: int = 0


def check_palette(palette=PALETTE, min_dist=64):
    cols = np.array(list(palette.values()), dtype=int)
    d = np.abs(cols[:, None, :] - cols[None, :, :]).max(-1)
    np.fill_diagonal(d, 255)
    return bool(d.min() >= min_dist)


def px(size: float, raster: int) -> int:
    return max(1, int(round(size * raster)))
