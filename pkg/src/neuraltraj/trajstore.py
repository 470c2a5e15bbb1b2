"""Trajectory records, the episode file format, multiview grids and co-training sampling.

Episode file layout (little-endian)::

    magic      5 bytes  b"NTRJ1"
    n_frames   u32
    H, W       u16, u16
    C          u8
    action_dim u8
    flags      u8       bit0 actions, bit1 states, bit2 latent-action block
    frames     n_frames*H*W*C u8
    actions    (n_frames-1)*action_dim f32            if bit0
    states     u16 n_obj, then n_frames records of     if bit1
               STATE_HEAD + n_obj*OBJ_FIELDS f32
    latent     u32 n, u16 L, u16 D, n*L u8 code indices,
               n*D f32 continuous embeddings           if bit2

State records hold gripper x, y, closed, held id (-1 none), step, env id,
agent (0 robot, 1 human), engaged drawer id (-1 none), object count, then per
object: id, shape index, color index, x, y, size, movable, art, on (-1 none).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import CorruptEpisode, EmptySource, SchemaMismatch, ShapeMismatch
from .gridsim.config import COLOR_NAMES, SHAPES
from .gridsim.state import ObjectState, SimState

MAGIC = b"NTRJ1"
HEADER = struct.Struct("<5sIHHBBB")
FLAG_ACTIONS, FLAG_STATES, FLAG_LATENT = 1, 2, 4
STATE_HEAD = 9
OBJ_FIELDS = 9
EMBODIMENTS = ("real", "neural")
SOURCES = ("expert", "worldmodel", "replay")


@dataclass
class LatentActions:
    """Per-window latent actions: code indices (n, L) and pre-quantization embeddings (n, D)."""

    indices: np.ndarray
    continuous: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.uint8)
        self.continuous = np.asarray(self.continuous, dtype=np.float32)
        if len(self.indices) != len(self.continuous):
            raise ShapeMismatch("latent indices and embeddings differ in length")

    def __len__(self):
        return len(self.indices)


@dataclass
class Trajectory:
    frames: np.ndarray  # (T+1, H, W, C) uint8
    actions: np.ndarray | None = None  # (T, action_dim) float32
    states: list[SimState] | None = None
    instruction: str = ""
    instruction_id: int = 0
    embodiment: str = "real"
    fps: int = 8
    source: str = "expert"
    seed: int = 0
    task_id: str = ""
    latent: LatentActions | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4:
            raise ShapeMismatch(f"frames must be (T+1, H, W, C), got {self.frames.shape}")
        if self.actions is not None:
            self.actions = np.asarray(self.actions, dtype=np.float32)
            if self.actions.ndim != 2 or len(self.actions) != len(self.frames) - 1:
                raise ShapeMismatch("need exactly one action per frame transition")
        if self.embodiment not in EMBODIMENTS:
            raise ValueError(f"unknown embodiment {self.embodiment!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.embodiment == "neural" and self.states is not None:
            raise ValueError("neural trajectories carry no state")
        if self.states is not None and len(self.states) != len(self.frames):
            raise ShapeMismatch("need one state per frame")

    def __len__(self):
        return len(self.frames) - 1

    @property
    def action_dim(self) -> int:
        return 0 if self.actions is None else self.actions.shape[1]

    def with_actions(self, actions) -> "Trajectory":
        return replace(self, actions=np.asarray(actions, dtype=np.float32))


def state_to_record(s: SimState) -> np.ndarray:
    head = [s.gripper_pos[0], s.gripper_pos[1], float(s.gripper_closed),
            -1 if s.held_object is None else s.held_object, s.step_count, s.env_id,
            0 if s.agent == "robot" else 1,
            -1 if s.engaged_handle is None else s.engaged_handle, len(s.objects)]
    rec = list(head)
    for o in s.objects:
        rec += [o.id, SHAPES.index(o.shape), COLOR_NAMES.index(o.color), o.pos[0], o.pos[1],
                o.size, float(o.movable), o.art, -1 if o.on is None else o.on]
    return np.asarray(rec, dtype=np.float32)


def _opt_id(v) -> int | None:
    return None if v < 0 else int(v)


def record_to_state(rec) -> SimState:
    r = [float(v) for v in np.asarray(rec, dtype=np.float32)]
    objs = []
    for k in range(int(r[8])):
        o = r[STATE_HEAD + k * OBJ_FIELDS: STATE_HEAD + (k + 1) * OBJ_FIELDS]
        objs.append(ObjectState(int(o[0]), SHAPES[int(o[1])], COLOR_NAMES[int(o[2])], (o[3], o[4]),
                                o[5], bool(o[6]), art=o[7], on=_opt_id(o[8])))
    return SimState(gripper_pos=(r[0], r[1]), gripper_closed=bool(r[2]), held_object=_opt_id(r[3]),
                    objects=tuple(objs), env_id=int(r[5]), step_count=int(r[4]),
                    agent="robot" if r[6] == 0 else "human", engaged_handle=_opt_id(r[7]))


def encode_episode(traj: Trajectory) -> bytes:
    t1, h, w, c = traj.frames.shape
    flags = 0
    if traj.actions is not None:
        flags |= FLAG_ACTIONS
    if traj.states is not None:
        flags |= FLAG_STATES
    if traj.latent is not None:
        flags |= FLAG_LATENT
    buf = io.BytesIO()
    buf.write(HEADER.pack(MAGIC, t1, h, w, c, traj.action_dim, flags))
    buf.write(np.ascontiguousarray(traj.frames).tobytes())
    if traj.actions is not None:
        buf.write(traj.actions.astype("<f4").tobytes())
    if traj.states is not None:
        n_obj = len(traj.states[0].objects)
        if any(len(s.objects) != n_obj for s in traj.states):
            raise ShapeMismatch("object count must be constant within an episode")
        buf.write(struct.pack("<H", n_obj))
        buf.write(np.stack([state_to_record(s) for s in traj.states]).astype("<f4").tobytes())
    if traj.latent is not None:
        idx, cont = traj.latent.indices, traj.latent.continuous
        n, L = idx.shape
        buf.write(struct.pack("<IHH", n, L, cont.shape[1]))
        buf.write(idx.astype(np.uint8).tobytes())
        buf.write(cont.astype("<f4").tobytes())
    return buf.getvalue()


def decode_episode(data: bytes, meta: dict | None = None) -> Trajectory:
    meta = meta or {}
    if len(data) < HEADER.size:
        raise CorruptEpisode("truncated header")
    magic, t1, h, w, c, adim, flags = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptEpisode(f"bad magic {magic!r}")
    off = HEADER.size

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise CorruptEpisode("truncated payload")
        out = data[off:off + n]
        off += n
        return out

    frames = np.frombuffer(take(t1 * h * w * c), dtype=np.uint8).reshape(t1, h, w, c).copy()
    actions = states = latent = None
    if flags & FLAG_ACTIONS:
        actions = np.frombuffer(take((t1 - 1) * adim * 4), dtype="<f4").reshape(t1 - 1, adim).copy()
    if flags & FLAG_STATES:
        (n_obj,) = struct.unpack("<H", take(2))
        width = STATE_HEAD + n_obj * OBJ_FIELDS
        recs = np.frombuffer(take(t1 * width * 4), dtype="<f4").reshape(t1, width)
        states = [record_to_state(r) for r in recs]
    if flags & FLAG_LATENT:
        n, L, D = struct.unpack("<IHH", take(8))
        idx = np.frombuffer(take(n * L), dtype=np.uint8).reshape(n, L).copy()
        cont = np.frombuffer(take(n * D * 4), dtype="<f4").reshape(n, D).copy()
        latent = LatentActions(idx, cont)
    if off != len(data):
        raise CorruptEpisode("trailing bytes after payload")
    return Trajectory(frames=frames, actions=actions, states=states,
                      instruction=meta.get("instruction", ""),
                      instruction_id=int(meta.get("instruction_id", 0)),
                      embodiment=meta.get("embodiment", "real"), fps=int(meta.get("fps", 8)),
                      source=meta.get("source", "expert"), seed=int(meta.get("seed", 0)),
                      task_id=meta.get("task_id", ""), latent=latent, meta=dict(meta.get("extra", {})))


@dataclass
class DatasetManifest:
    name: str
    episode_count: int
    frame_shape: list[int]
    action_dim: int
    embodiment_histogram: dict[str, int]
    episodes: list[dict]

    @property
    def digest(self) -> str:
        """Content digest of the whole dataset (episode digests plus metadata)."""
        payload = json.dumps(self.to_json() | {"name": ""}, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_json(self) -> dict:
        return {"format": "NTRJ1", "name": self.name, "episode_count": self.episode_count,
                "frame_shape": list(self.frame_shape), "action_dim": self.action_dim,
                "embodiment_histogram": dict(self.embodiment_histogram), "episodes": self.episodes}

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(d["name"], int(d["episode_count"]), list(d["frame_shape"]), int(d["action_dim"]),
                   dict(d["embodiment_histogram"]), list(d["episodes"]))


def _episode_name(i: int) -> str:
    return f"episode_{i:05d}.bin"


def write_dataset(trajs: Sequence[Trajectory], directory, name: str | None = None) -> DatasetManifest:
    """Write trajectories plus ``manifest.json``; episodes must share frame shape and action width."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("episode_*.bin"):
        old.unlink()
    shapes = {t.frames.shape[1:] for t in trajs}
    if len(shapes) > 1:
        raise ShapeMismatch(f"mixed frame shapes {shapes}")
    dims = {t.action_dim for t in trajs if t.actions is not None}
    if len(dims) > 1:
        raise ShapeMismatch(f"mixed action widths {dims}")
    episodes = []
    for i, t in enumerate(trajs):
        blob = encode_episode(t)
        fname = _episode_name(i)
        (d / fname).write_bytes(blob)
        episodes.append({"file": fname, "sha256": hashlib.sha256(blob).hexdigest(),
                         "n_frames": len(t.frames), "instruction": t.instruction,
                         "instruction_id": t.instruction_id, "embodiment": t.embodiment,
                         "fps": t.fps, "source": t.source, "seed": t.seed, "task_id": t.task_id,
                         "extra": t.meta})
    manifest = DatasetManifest(
        name=name or d.name, episode_count=len(episodes),
        frame_shape=list(next(iter(shapes))) if shapes else [],
        action_dim=next(iter(dims)) if dims else 0,
        embodiment_histogram=dict(Counter(t.embodiment for t in trajs)), episodes=episodes)
    (d / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True), encoding="utf-8")
    return manifest


def read_manifest(directory) -> DatasetManifest:
    return DatasetManifest.from_json(json.loads((Path(directory) / "manifest.json").read_text(encoding="utf-8")))


def read_dataset(directory) -> list[Trajectory]:
    """Load a dataset, verifying every episode digest and its schema against the manifest."""
    d = Path(directory)
    m = read_manifest(d)
    files = sorted(d.glob("episode_*.bin"))
    if len(files) != m.episode_count or len(m.episodes) != m.episode_count:
        raise SchemaMismatch(f"manifest lists {m.episode_count} episodes, found {len(files)} files")
    out = []
    for ep in m.episodes:
        blob = (d / ep["file"]).read_bytes()
        if hashlib.sha256(blob).hexdigest() != ep["sha256"]:
            raise CorruptEpisode(f"{ep['file']}: digest mismatch")
        t = decode_episode(blob, ep)
        if list(t.frames.shape[1:]) != list(m.frame_shape):
            raise SchemaMismatch(f"{ep['file']}: frame shape {t.frames.shape[1:]} != {m.frame_shape}")
        if t.actions is not None and t.action_dim != m.action_dim:
            raise SchemaMismatch(f"{ep['file']}: action_dim {t.action_dim} != {m.action_dim}")
        out.append(t)
    return out


# ---------------------------------------------------------------- multiview

SLOTS = ("top_left", "top_right", "bottom_left", "bottom_right")


def compose_multiview(views: Sequence[np.ndarray], layout: Sequence[str] = SLOTS[:3]) -> np.ndarray:
    """Tile 2 or 3 equally shaped views into a 2x2 grid; unused cells are black."""
    if not 2 <= len(views) <= 3:
        raise ShapeMismatch(f"need 2 or 3 views, got {len(views)}")
    views = [np.asarray(v) for v in views]
    if len({v.shape for v in views}) != 1 or views[0].ndim != 3:
        raise ShapeMismatch(f"views differ in shape: {[v.shape for v in views]}")
    h, w, c = views[0].shape
    grid = np.zeros((2 * h, 2 * w, c), dtype=views[0].dtype)
    for v, slot in zip(views, layout):
        r, q = divmod(SLOTS.index(slot), 2)
        grid[r * h:(r + 1) * h, q * w:(q + 1) * w] = v
    return grid


def decompose_multiview(grid: np.ndarray, n_views: int = 3, layout: Sequence[str] = SLOTS[:3]) -> list[np.ndarray]:
    h, w = grid.shape[0] // 2, grid.shape[1] // 2
    out = []
    for slot in layout[:n_views]:
        r, q = divmod(SLOTS.index(slot), 2)
        out.append(grid[r * h:(r + 1) * h, q * w:(q + 1) * w].copy())
    return out


# ---------------------------------------------------------------- sampling

def cotraining_sampler(real_ds: Sequence[Trajectory], neural_ds: Sequence[Trajectory],
                       ratio=(1, 1), seed: int = 0) -> Iterator[Trajectory]:
    """Endless seeded stream; each draw is real with probability ratio[0] / sum(ratio)."""
    r_real, r_neural = float(ratio[0]), float(ratio[1])
    if r_real < 0 or r_neural < 0 or r_real + r_neural <= 0:
        raise ValueError(f"bad ratio {ratio}")
    if r_real > 0 and not len(real_ds):
        raise EmptySource("real dataset is empty")
    if r_neural > 0 and not len(neural_ds):
        raise EmptySource("neural dataset is empty")
    p_real = r_real / (r_real + r_neural)
    rng = np.random.default_rng(seed)
    while True:
        src = real_ds if rng.random() < p_real else neural_ds
        yield src[int(rng.integers(len(src)))]
