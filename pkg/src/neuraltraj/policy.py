"""Visuomotor policy with a shared slot trunk and one action head per embodiment.

Real samples train ``head_r`` and see the proprioceptive state vector; neural
samples train ``head_n`` and always see a zero state.  Execution uses
``head_r`` whenever real data was seen.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .base import NetEstimator, check_frame, check_trajectories
from .diffkit import Linear, Module, Tensor, register_architecture
from .diffkit import ops as T
from .exceptions import ConfigError, EmptyDataset, IndexOutOfRange, ShapeMismatch
from .features import ACTOR_DIM, InstructionEncoding, encode_frame, encode_video, scene_statics
from .gridsim import evaluate_policy, render
from .gridsim.state import SimState
from .gridsim.tasks import default_catalog
from .nets import SlotTrunk, slot_inputs
from .trajstore import Trajectory, cotraining_sampler

STATE_DIM = 4  # gripper x, gripper y, closed, holding
ACTION_DIM = 3


def state_vector(s: SimState | None) -> np.ndarray:
    """Proprioceptive projection of a sim state; ``None`` gives the zero vector."""
    if s is None:
        return np.zeros(STATE_DIM, np.float32)
    return np.array([s.gripper_pos[0], s.gripper_pos[1], float(s.gripper_closed),
                     float(s.held_object is not None)], np.float32)


def assemble_input(traj: Trajectory, t: int):
    """(frame, instruction, state vector) at step ``t``; neural steps get a zero state."""
    if not 0 <= t < len(traj.frames):
        raise IndexOutOfRange(f"t={t} outside [0, {len(traj.frames)})")
    state = traj.states[t] if traj.embodiment == "real" and traj.states is not None else None
    return traj.frames[t], traj.instruction, state_vector(state)


@register_architecture("dual_head_policy")
class DualHeadPolicyNet(Module):
    def __init__(self, seed: int = 0, horizon: int = 4, d_model: int = 48, n_heads: int = 4, hidden: int = 128,
                 instr_dim: int = 32, neural_dim: int = 0):
        rng = np.random.default_rng(seed)
        neural_dim = neural_dim or horizon * ACTION_DIM
        self.config = {"horizon": horizon, "d_model": d_model, "n_heads": n_heads, "hidden": hidden,
                       "instr_dim": instr_dim, "neural_dim": neural_dim}
        self.trunk = SlotTrunk(ACTOR_DIM + STATE_DIM, d_model, n_heads, hidden, rng, instr_dim=instr_dim)
        self.head_r = Linear(hidden, horizon * ACTION_DIM, rng, scale=0.3)
        self.head_n = Linear(hidden, neural_dim, rng, scale=0.3)

    def features(self, b: dict) -> Tensor:
        state = b["state"] * b["is_real"][:, None]  # the state slot is identically zero for neural samples
        ctx = Tensor(np.concatenate([b["actor"], state], axis=-1))
        h, _, _ = self.trunk(b["slots"], b["present"], ctx, b["tokens"])
        return h

    def head(self, h: Tensor, name: str, squash: bool = True) -> Tensor:
        out = (self.head_r if name == "r" else self.head_n)(h)
        return T.tanh(out) if squash else out


@dataclass
class Samples:
    slots: np.ndarray
    present: np.ndarray
    actor: np.ndarray
    state: np.ndarray
    tokens: np.ndarray
    is_real: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.actor)

    def batch(self, idx) -> dict:
        return {k: getattr(self, k)[idx] for k in ("slots", "present", "actor", "state", "tokens", "is_real")}



def _chunk(actions: np.ndarray, t: int, H: int) -> np.ndarray:
    out = np.zeros((H, ACTION_DIM), np.float32)
    seg = actions[t:t + H]
    out[:len(seg)] = seg
    out[len(seg):, 2] = actions[-1, 2]  # hold the final grip after the episode ends
    return out.reshape(-1)


def _frame_inputs(objs, actor, shapes):
    return slot_inputs(objs[None], shapes[None], actor[None])[0], objs[:, 0]


def build_samples(trajs, enc: InstructionEncoding, H: int, target: str = "actions",
                  zero_state: bool = False) -> Samples:
    """One sample per labeled step; ``target='latent'`` regresses continuous latent actions."""
    cols = {k: [] for k in Samples.__dataclass_fields__}
    for tr in trajs:
        sv = encode_video(tr.frames)
        shapes = sv.statics.shape_onehot()
        tok = np.array(enc.tokens(tr.instruction), np.int64)
        real = tr.embodiment == "real"
        if target == "latent":
            if tr.latent is None:
                raise EmptyDataset("latent targets requested but trajectory has no latent actions")
            steps, ys = range(len(tr.latent)), tr.latent.continuous
        else:
            if tr.actions is None:
                raise EmptyDataset("trajectory has no action labels")
            steps = range(len(tr.actions))
            ys = [_chunk(tr.actions, t, H) for t in steps]
        for t in steps:
            slots, present = _frame_inputs(sv.objs[t], sv.actor[t], shapes)
            _, _, sv_state = assemble_input(tr, t)
            cols["slots"].append(slots)
            cols["present"].append(present)
            cols["actor"].append(sv.actor[t])
            cols["state"].append(np.zeros(STATE_DIM, np.float32) if zero_state else sv_state)
            cols["tokens"].append(tok)
            cols["is_real"].append(float(real))
            cols["target"].append(ys[t])
    if not cols["actor"]:
        raise EmptyDataset("no labeled steps")
    return Samples(**{k: np.stack(v).astype(np.int64 if k == "tokens" else np.float32) for k, v in cols.items()})


@dataclass
class TrainingRun:
    """Everything needed to reproduce one policy training run."""

    real: list = field(default_factory=list)
    neural: list = field(default_factory=list)
    ratio: tuple = (1, 1)
    seed: int = 0
    steps: int = 3000
    neural_target: str = "actions"
    eval_tasks: list = field(default_factory=list)
    eval_trials: int = 10
    config: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {"n_real": len(self.real), "n_neural": len(self.neural), "ratio": list(self.ratio),
                "seed": self.seed, "steps": self.steps, "neural_target": self.neural_target,
                "eval_tasks": [getattr(t, "task_id", t) for t in self.eval_tasks],
                "eval_trials": self.eval_trials, "config": self.config}


class Policy(NetEstimator):
    """Closed-loop policy: ``act(frame, instruction, state)`` returns an H x 3 chunk from the execution head."""

    wants_state = True

    def __init__(self, horizon: int = 4, d_model: int = 48, n_heads: int = 4, hidden: int = 128,
                 instr_dim: int = 32, steps: int = 3000, batch_size: int = 128, lr: float = 2e-3,
                 ratio: tuple = (1, 1), neural_target: str = "actions", exec_head: str = "auto",
                 zero_state: bool = False, seed: int = 0):
        self.horizon = horizon
        self.d_model = d_model
        self.n_heads = n_heads
        self.hidden = hidden
        self.instr_dim = instr_dim
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.ratio = ratio
        self.neural_target = neural_target
        self.exec_head = exec_head
        self.zero_state = zero_state
        self.seed = seed

    def _bundle_meta(self) -> dict:
        meta = super()._bundle_meta()
        meta.update(head=self.head_, frame_shape=list(self.frame_shape_))
        return meta

    @classmethod
    def from_bundle(cls, bundle):
        est = super().from_bundle(bundle)
        est.head_ = bundle.meta["head"]
        est.frame_shape_ = tuple(bundle.meta["frame_shape"])
        est.enc_ = InstructionEncoding(default_catalog())
        return est

    def _split(self, trajs):
        real = [t for t in trajs if t.embodiment == "real"]
        neural = [t for t in trajs if t.embodiment == "neural"]
        return real, neural

    def _prepare(self, trajs):
        """Encode samples and build a fresh network; returns (parts, pools) for ``_batch_loss``."""
        trajs = check_trajectories(trajs)
        real, neural = self._split(trajs)
        if self.neural_target == "latent" and not real:
            raise ConfigError("latent neural targets need real data for the execution head")
        self.enc_ = InstructionEncoding(default_catalog())
        self.frame_shape_ = tuple(trajs[0].frames.shape[1:])
        parts, pools, n = [], [[], []], 0
        if real:
            parts.append(build_samples(real, self.enc_, self.horizon, "actions", self.zero_state))
            pools[0] = list(range(n, n + len(parts[-1])))
            n += len(parts[-1])
        if neural:
            parts.append(build_samples(neural, self.enc_, self.horizon, self.neural_target))
            pools[1] = list(range(n, n + len(parts[-1])))
        neural_dim = parts[-1].target.shape[1] if neural else 0
        self.model_ = DualHeadPolicyNet(seed=self.seed, horizon=self.horizon, d_model=self.d_model,
                                        n_heads=self.n_heads, hidden=self.hidden, instr_dim=self.instr_dim,
                                        neural_dim=neural_dim)
        self.consumed_ = {"real": 0, "neural": 0}
        self.metrics_ = []
        if self.exec_head == "auto":
            self.head_ = "r" if real else "n"
        else:
            self.head_ = self.exec_head
        return parts, pools

    def fit(self, trajs, y=None):
        parts, pools = self._prepare(trajs)
        ratio = (self.ratio[0] if pools[0] else 0, self.ratio[1] if pools[1] else 0)
        draws = cotraining_sampler(pools[0], pools[1], ratio, seed=self.seed)

        def loss_fn(rng):
            idx = np.fromiter((next(draws) for _ in range(self.batch_size)), np.int64, self.batch_size)
            loss, lr_, ln_ = self._batch_loss(parts, pools, idx)
            self.metrics_.append({"step": len(self.metrics_), "loss_real": lr_, "loss_neural": ln_,
                                  "eval_score": ""})
            return loss

        self.history_ = self._train(loss_fn, self.model_.trainable(), self.steps, self.lr,
                                    np.random.default_rng(self.seed), cosine=True)
        return self

    def _batch_loss(self, parts, pools, idx):
        n_real = len(pools[0])
        r_idx, n_idx = idx[idx < n_real], idx[idx >= n_real] - n_real
        total, lr_, ln_ = None, "", ""
        groups = []
        if len(r_idx):
            groups.append(("r", parts[0], r_idx))
        if len(n_idx):
            groups.append(("n", parts[-1], n_idx))
        for head, part, ii in groups:
            self.consumed_["real" if head == "r" else "neural"] += len(ii)
            h = self.model_.features(part.batch(ii))
            squash = head == "r" or self.neural_target == "actions"
            loss = T.mse(self.model_.head(h, head, squash), part.target[ii])
            if head == "r":
                lr_ = loss.item()
            else:
                ln_ = loss.item()
            loss = loss * (len(ii) / len(idx))
            total = loss if total is None else total + loss
        return total, lr_, ln_

    # ------------------------------------------------------------ execution

    def reset(self, task, state):
        self._statics = scene_statics(render(state))

    def act(self, frame, instruction, state: SimState | None = None, seed: int = 0) -> np.ndarray:
        """Deterministic H x 3 action chunk in [-1, 1]."""
        self._check_fitted()
        frame = check_frame(frame, self.frame_shape_)
        statics = getattr(self, "_statics", None) or scene_statics(frame)
        objs, actor = encode_frame(frame, statics)
        slots, present = _frame_inputs(objs, actor, statics.shape_onehot())
        sv = np.zeros(STATE_DIM, np.float32) if self.zero_state else state_vector(state)
        b = {"slots": slots[None], "present": present[None], "actor": actor[None], "state": sv[None],
             "tokens": self.enc_.batch([instruction]), "is_real": np.array([float(self.head_ == "r")], np.float32)}
        out = self.model_.head(self.model_.features(b), self.head_).data[0]
        return np.clip(out.reshape(self.horizon, ACTION_DIM), -1.0, 1.0)

    def evaluate(self, tasks, n_trials: int = 10, rng_seed: int = 0) -> float:
        return float(np.mean([evaluate_policy(self, t, n_trials, rng_seed).mean for t in tasks]))

    def write_metrics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["step", "loss_real", "loss_neural", "eval_score"])
            w.writeheader()
            w.writerows(self.metrics_)


def train_policy(run: TrainingRun) -> Policy:
    """Fit a policy from a run description; logs the final eval score when tasks are given."""
    pol = Policy(ratio=run.ratio, neural_target=run.neural_target, steps=run.steps, seed=run.seed, **run.config)
    pol.fit(list(run.real) + list(run.neural))
    if run.eval_tasks:
        score = pol.evaluate(run.eval_tasks, run.eval_trials)
        pol.metrics_[-1]["eval_score"] = score
        pol.eval_score_ = score
    return pol


def act(bundle, obs, instr, state=None, seed: int = 0) -> np.ndarray:
    return Policy.from_bundle(bundle).act(obs, instr, state, seed)
