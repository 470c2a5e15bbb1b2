from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def frame_strip(frames, every: int = 1, scale: int = 4) -> np.ndarray:
    frames = [np.asarray(f, dtype=np.uint8) for f in frames[::every]]
    h = frames[0].shape[0]
    sep = np.zeros((h, 1, 3), dtype=np.uint8)
    parts = []
    for f in frames:
        parts += [f, sep]
    strip = np.concatenate(parts[:-1], axis=1)
    return strip.repeat(scale, axis=0).repeat(scale, axis=1)


def save_png_strip(frames, path, every: int = 1, scale: int = 4) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame_strip(frames, every, scale)).save(path)
    return path
