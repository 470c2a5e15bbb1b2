"""Action-free, instruction-conditioned video generator over slot latents.

Frames are encoded by the fixed slot encoder; a learned mixer predicts the next
latent from the current latent, its last change and the instruction; frames
are produced by rendering the predicted latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import NetEstimator, check_frame, check_trajectories
from .diffkit import (
    MLP,
    Linear,
    ModelBundle,
    Module,
    Tensor,
    attach_lora,
    detach_lora,
    linear_paths,
    register_architecture,
)
from .diffkit import ops as T
from .exceptions import EmptyCorpus
from .features import (
    ACTOR_DIM,
    N_SLOTS,
    InstructionEncoding,
    SlotVideo,
    encode_video,
    render_slots,
    scene_statics,
    encode_frame,
)
from .gridsim.config import DEFAULT_CONFIG
from .gridsim.tasks import default_catalog
from .nets import SlotTrunk, slot_inputs
from .trajstore import Trajectory

POS_SCALE = 1.0 / DEFAULT_CONFIG.v_max
ART_SCALE = 4.0
_OBJ_SCALE = np.array([POS_SCALE, POS_SCALE, ART_SCALE], np.float32)
_ACT_SCALE = np.array([POS_SCALE, POS_SCALE, 1.0], np.float32)


@register_architecture("slot_world_model")
class SlotWorldModel(Module):
    """Actor head (attention over slots) and a shared per-slot object head."""

    def __init__(self, seed: int = 0, d_model: int = 48, n_heads: int = 4, hidden: int = 128, instr_dim: int = 32):
        rng = np.random.default_rng(seed)
        self.config = {"d_model": d_model, "n_heads": n_heads, "hidden": hidden, "instr_dim": instr_dim}
        ctx = ACTOR_DIM + 3
        self.trunk = SlotTrunk(ctx, d_model, n_heads, hidden, rng, slot_extra=3, instr_dim=instr_dim)
        self.actor_head = Linear(hidden, 3, rng, scale=0.3)
        self.obj_head = MLP([d_model + 4 + instr_dim, hidden, 3], rng, out_scale=0.3)

    def forward(self, b: dict, actor_next: np.ndarray | Tensor):
        """Returns scaled (actor delta, object deltas); object deltas are conditioned on ``actor_next``."""
        n = len(b["actor"])
        slots = np.concatenate([slot_inputs(b["objs"], b["shapes"], b["actor"]), b["dobj"]], axis=-1)
        ctx = Tensor(np.concatenate([b["actor"], b["dact"]], axis=-1))
        h, tok, e = self.trunk(slots, b["objs"][:, :, 0], ctx, b["tokens"])
        a_pred = self.actor_head(h)
        an = actor_next if isinstance(actor_next, Tensor) else Tensor(actor_next)
        per = T.broadcast_to(T.reshape(an, (n, 1, 4)), (n, N_SLOTS, 4))
        ee = T.broadcast_to(T.reshape(e, (n, 1, e.shape[-1])), (n, N_SLOTS, e.shape[-1]))
        o_pred = self.obj_head(T.concat([tok, per, ee], axis=-1))
        return a_pred, o_pred


@dataclass
class Transitions:
    objs: np.ndarray
    shapes: np.ndarray
    actor: np.ndarray
    dobj: np.ndarray
    dact: np.ndarray
    tokens: np.ndarray
    y_actor: np.ndarray  # scaled actor delta (x, y, closed)
    y_obj: np.ndarray  # scaled object delta (x, y, art)
    next_actor: np.ndarray  # conditioning for the object head: scaled delta + next closed

    def __len__(self):
        return len(self.actor)

    def batch(self, idx) -> dict:
        return {"objs": self.objs[idx], "shapes": self.shapes[idx], "actor": self.actor[idx],
                "dobj": self.dobj[idx], "dact": self.dact[idx], "tokens": self.tokens[idx]}


def _step_inputs(sv: SlotVideo, t: int):
    cur_o, cur_a = sv.objs[t], sv.actor[t]
    if t > 0:
        dobj = (cur_o[:, 1:] - sv.objs[t - 1][:, 1:]) * _OBJ_SCALE
        dact = (cur_a[[1, 2, 3]] - sv.actor[t - 1][[1, 2, 3]]) * _ACT_SCALE
    else:
        dobj = np.zeros((N_SLOTS, 3), np.float32)
        dact = np.zeros(3, np.float32)
    return cur_o, cur_a, dobj, dact


def _pad(sv: SlotVideo, n: int) -> SlotVideo:
    if n is None or len(sv) >= n:
        return sv
    k = n - len(sv)
    return SlotVideo(np.concatenate([sv.objs, np.repeat(sv.objs[-1:], k, 0)]),
                     np.concatenate([sv.actor, np.repeat(sv.actor[-1:], k, 0)]), sv.statics)


def build_transitions(videos, enc: InstructionEncoding, pad_to: int | None = None, encoded=None) -> Transitions:
    cols = {k: [] for k in Transitions.__dataclass_fields__}
    for i, v in enumerate(videos):
        sv = encoded[i] if encoded is not None else encode_video(v.frames)
        sv = _pad(sv, pad_to)
        tok = np.array(enc.tokens(v.instruction), np.int64)
        shp = sv.statics.shape_onehot()
        o, a = sv.objs, sv.actor
        for t in range(len(sv) - 1):
            cur_o, cur_a, dobj, dact = _step_inputs(sv, t)
            ya = (a[t + 1][[1, 2, 3]] - cur_a[[1, 2, 3]]) * _ACT_SCALE
            yo = (o[t + 1][:, 1:] - cur_o[:, 1:]) * _OBJ_SCALE
            cols["objs"].append(cur_o)
            cols["shapes"].append(shp)
            cols["actor"].append(cur_a)
            cols["dobj"].append(dobj)
            cols["dact"].append(dact)
            cols["tokens"].append(tok)
            cols["y_actor"].append(ya)
            cols["y_obj"].append(yo)
            cols["next_actor"].append(np.concatenate([ya, a[t + 1][3:4]]))
    if not cols["actor"]:
        raise EmptyCorpus("no transitions in corpus")
    return Transitions(**{k: np.stack(v).astype(np.int64 if k == "tokens" else np.float32) for k, v in cols.items()})


def _loss(model: SlotWorldModel, tr: Transitions, idx, grip_weight: float = 1.0) -> Tensor:
    b = tr.batch(idx)
    a_pred, o_pred = model(b, tr.next_actor[idx])
    mask = tr.objs[idx][:, :, :1]
    # grip flips are rare binary events; without extra weight their regression stays under threshold
    w = np.array([1.0, 1.0, grip_weight], np.float32)
    da = a_pred - tr.y_actor[idx]
    la = T.tsum(da * da * w) * (1.0 / (len(idx) * 3))
    diff = (o_pred - tr.y_obj[idx]) * mask
    lo = T.tsum(diff * diff) * (1.0 / max(1.0, float(mask.sum()) * 3))
    return la + lo


class WorldModel(NetEstimator):
    """Estimator: ``fit`` pretrains, ``finetune_lora`` adapts, ``rollout`` generates videos."""

    def __init__(self, d_model: int = 48, n_heads: int = 4, hidden: int = 128, instr_dim: int = 32,
                 steps: int = 3000, batch_size: int = 128, lr: float = 2e-3, seed: int = 0,
                 pad_to: int | None = 65, sampler: str = "deterministic", noise_scale: float = 0.1,
                 grip_weight: float = 5.0):
        self.d_model = d_model
        self.n_heads = n_heads
        self.hidden = hidden
        self.instr_dim = instr_dim
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.pad_to = pad_to
        self.sampler = sampler
        self.noise_scale = noise_scale
        self.grip_weight = grip_weight

    @property
    def encoding(self) -> InstructionEncoding:
        return InstructionEncoding(default_catalog())

    def _new_model(self) -> SlotWorldModel:
        return SlotWorldModel(seed=self.seed, d_model=self.d_model, n_heads=self.n_heads,
                              hidden=self.hidden, instr_dim=self.instr_dim)

    def transitions(self, videos) -> Transitions:
        return build_transitions(videos, self.encoding, self.pad_to)

    # ------------------------------------------------------------ training
    def fit(self, videos, y=None, steps: int | None = None):
        videos = list(videos)
        if not videos:
            raise EmptyCorpus("empty pretraining corpus")
        check_trajectories(videos)
        self.frame_shape_ = tuple(videos[0].frames.shape[1:])
        tr = self.transitions(videos)
        self.model_ = self._new_model()
        self.history_ = self._fit_on(tr, self.model_.trainable(), steps or self.steps, self.lr, self.seed)
        return self

    def _fit_on(self, tr: Transitions, params, steps, lr, seed):
        rng = np.random.default_rng(seed)
        bs = self.batch_size
        loss = lambda r: _loss(self.model_, tr, r.integers(0, len(tr), bs), self.grip_weight)
        return self._train(loss, params, steps, lr, rng)

    def finetune_lora(self, videos, r: int = 4, alpha: float = 4.0, lr: float = 1e-4,
                      steps: int | None = None, targets=None, seed: int | None = None) -> "WorldModel":
        """Adapted copy: base frozen, only the low-rank overlays train."""
        self._check_fitted()
        check_trajectories(videos)
        new = self.copy()
        attach_lora(new.model_, targets, r=r, alpha=alpha, seed=self.seed if seed is None else seed)
        tr = new.transitions(videos)
        new.finetune_history_ = new._fit_on(tr, new.model_.trainable(), steps or self.steps, lr,
                                            (self.seed if seed is None else seed) + 1)
        return new

    def finetune_full(self, videos, lr: float = 1e-4, steps: int | None = None, seed: int | None = None) -> "WorldModel":
        """Control: update every weight (no adapters)."""
        self._check_fitted()
        new = self.copy()
        tr = new.transitions(videos)
        new.finetune_history_ = new._fit_on(tr, new.model_.trainable(), steps or self.steps, lr,
                                            (self.seed if seed is None else seed) + 1)
        return new

    def without_adapters(self) -> "WorldModel":
        new = self.copy()
        detach_lora(new.model_)
        for p in new.model_.parameters():
            p.requires_grad = True
        return new

    @property
    def lora_targets(self) -> list[str]:
        return linear_paths(self._new_model())

    # ------------------------------------------------------------ evaluation
    def validation_loss(self, videos, pixel: bool = False) -> float:
        """One-step teacher-forced loss: latent regression, or pixel MSE of the rendered prediction."""
        self._check_fitted()
        videos = check_trajectories(videos)
        if not pixel:
            tr = build_transitions(videos, self.encoding, pad_to=None)
            total, n = 0.0, 0
            for s in range(0, len(tr), 1024):
                idx = np.arange(s, min(len(tr), s + 1024))
                total += _loss(self.model_, tr, idx).item() * len(idx)
                n += len(idx)
            return total / n
        errs = []
        for v in videos:
            sv = encode_video(v.frames)
            for t in range(len(sv) - 1):
                o, a = self._predict(sv, t, self.encoding.tokens(v.instruction), None)
                f = render_slots(o, a, sv.statics, v.frames.shape[1])
                errs.append(np.mean((f.astype(np.float32) - v.frames[t + 1]) ** 2) / 255.0 ** 2)
        return float(np.mean(errs))

    def score(self, videos, y=None) -> float:
        return -self.validation_loss(videos)

    def _predict(self, sv: SlotVideo, t: int, tokens, rng):
        cur_o, cur_a, dobj, dact = _step_inputs(sv, t)
        b = {"objs": cur_o[None], "shapes": sv.statics.shape_onehot()[None], "actor": cur_a[None],
             "dobj": dobj[None], "dact": dact[None], "tokens": np.asarray(tokens, np.int64)[None]}
        a_pred, _ = self.model_(b, np.zeros((1, 4), np.float32))
        da = a_pred.data[0].astype(np.float64)
        if rng is not None and self.sampler == "seeded-noise":
            da = da + rng.normal(0.0, self.noise_scale, 3)
        next_a = cur_a.astype(np.float64).copy()
        lo, hi = DEFAULT_CONFIG.wall_margin, 1.0 - DEFAULT_CONFIG.wall_margin
        next_a[1:3] = np.clip(cur_a[1:3] + da[:2] / POS_SCALE, lo, hi)
        next_a[3] = float(np.clip(cur_a[3] + da[2], 0.0, 1.0) > 0.5)
        cond = np.concatenate([(next_a[[1, 2, 3]] - cur_a[[1, 2, 3]]) * _ACT_SCALE, next_a[3:4]]).astype(np.float32)
        _, o_pred = self.model_(b, cond[None])
        do = o_pred.data[0] / _OBJ_SCALE
        next_o = cur_o.astype(np.float64).copy()
        present = cur_o[:, 0] > 0.5
        next_o[present, 1:3] = np.clip(cur_o[present, 1:3] + do[present, :2], 0.03, 0.97)
        next_o[present, 3] = np.clip(cur_o[present, 3] + do[present, 2], 0.0, 1.0)
        return next_o.astype(np.float32), next_a.astype(np.float32)

    def rollout(self, initial_frame, instruction, T: int = 64, seed: int = 0,
                embodiment: str = "neural") -> Trajectory:
        """Generate ``T`` frames after ``initial_frame``; returns T + 1 frames, no actions."""
        self._check_fitted()
        frame = check_frame(initial_frame, getattr(self, "frame_shape_", None))
        tokens = self.encoding.tokens(instruction)
        statics = scene_statics(frame)
        o0, a0 = encode_frame(frame, statics)
        objs, actors = [o0], [a0]
        rng = np.random.default_rng(seed)
        frames = [frame.copy()]
        for t in range(T):
            sv = SlotVideo(np.stack(objs[-2:]), np.stack(actors[-2:]), statics)
            o, a = self._predict(sv, len(sv) - 1, tokens, rng)
            objs.append(o)
            actors.append(a)
            frames.append(render_slots(o, a, statics, frame.shape[1]))
        text = instruction.instruction if hasattr(instruction, "instruction") else instruction
        return Trajectory(np.stack(frames), instruction=text, instruction_id=self.encoding.instruction_id(instruction),
                          embodiment=embodiment, fps=DEFAULT_CONFIG.fps, source="worldmodel", seed=seed,
                          task_id=getattr(instruction, "task_id", ""))


# ---------------------------------------------------------------- functional API

def pretrain(corpus, config: dict | None = None, seed: int = 0) -> ModelBundle:
    return WorldModel(**(config or {}), seed=seed).fit(corpus).bundle_


def finetune_lora(bundle: ModelBundle, robot_ds, r: int = 4, alpha: float = 4.0, lr: float = 1e-4,
                  steps: int | None = None) -> ModelBundle:
    wm = WorldModel.from_bundle(bundle)
    return wm.finetune_lora(robot_ds, r=r, alpha=alpha, lr=lr, steps=steps).bundle_


def rollout(bundle: ModelBundle, initial_frame, instruction, T: int = 64, seed: int = 0) -> Trajectory:
    return WorldModel.from_bundle(bundle).rollout(initial_frame, instruction, T, seed)


__all__ = ["SlotWorldModel", "WorldModel", "Transitions", "build_transitions", "pretrain", "finetune_lora",
           "rollout"]
