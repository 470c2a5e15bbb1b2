"""Pseudo-action labels for action-free videos.

``InverseDynamics``: flow-matching model of the H-step action chunk connecting
two frames, applied with a sliding window.  ``LatentActionCodec``: VQ-VAE over
the slot change between frame t and frame t + delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import NetEstimator, check_trajectories
from .diffkit import MLP, Embedding, ModelBundle, Module, Tensor, register_architecture
from .diffkit import ops as T
from .exceptions import MissingActions, TooShort
from .features import FLAT_DIM, N_SLOTS, OBJ_DYN, ACTOR_DIM, encode_video
from .gridsim import inverse_render, is_success, render, rollout_actions
from .gridsim.config import DEFAULT_CONFIG
from .trajstore import LatentActions, Trajectory

DELTA_SCALE = 1.0 / DEFAULT_CONFIG.v_max
ACTION_DIM = 3


def pair_features(flat: np.ndarray, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Condition vector for frame pairs: features at t0 and the scaled change to t1."""
    a, b = flat[t0], flat[t1]
    return np.concatenate([a, (b - a) * DELTA_SCALE], axis=-1).astype(np.float32)


def _time_embed(tau: np.ndarray) -> np.ndarray:
    f = np.array([1.0, 2.0, 4.0, 8.0], np.float32) * np.pi
    return np.concatenate([tau[:, None], np.sin(tau[:, None] * f), np.cos(tau[:, None] * f)], axis=1).astype(np.float32)


@register_architecture("flow_idm")
class FlowIDMNet(Module):
    def __init__(self, seed: int = 0, horizon: int = 4, hidden: int = 256, depth: int = 3):
        rng = np.random.default_rng(seed)
        self.config = {"horizon": horizon, "hidden": hidden, "depth": depth}
        n_out = horizon * ACTION_DIM
        self.net = MLP([2 * FLAT_DIM + n_out + 9] + [hidden] * depth + [n_out], rng, out_scale=0.5)

    def forward(self, cond: np.ndarray, x: Tensor | np.ndarray, tau: np.ndarray) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.net(T.concat([Tensor(cond), x, Tensor(_time_embed(tau))], axis=-1))


@dataclass
class _PairSet:
    cond: np.ndarray
    chunks: np.ndarray  # (N, H*3)


def _flat_videos(trajs):
    return [encode_video(t.frames).flat() for t in trajs]


class InverseDynamics(NetEstimator):
    """Frame pair (t, t+H) -> H x 3 action chunk by flow matching.

    Labels integrate the velocity field with ``n_flow_steps`` Euler steps from
    seeded Gaussian noise times ``noise_scale``; the default 0 starts every
    window at the noise mean, which gives the most faithful replays.
    """

    def __init__(self, horizon: int = 4, hidden: int = 256, depth: int = 3, steps: int = 3000,
                 batch_size: int = 256, lr: float = 1e-3, n_flow_steps: int = 10, merge: str = "mean",
                 noise_scale: float = 0.0, seed: int = 0):
        self.horizon = horizon
        self.hidden = hidden
        self.depth = depth
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.n_flow_steps = n_flow_steps
        self.merge = merge
        self.noise_scale = noise_scale
        self.seed = seed

    def _pairs(self, trajs, flats) -> _PairSet:
        H = self.horizon
        conds, chunks = [], []
        for t, flat in zip(trajs, flats):
            n = len(t.actions)
            if n < H:
                continue
            starts = np.arange(0, n - H + 1)
            conds.append(pair_features(flat, starts, starts + H))
            chunks.append(np.stack([t.actions[s:s + H].reshape(-1) for s in starts]))
        if not conds:
            raise TooShort(f"no trajectory has {H} actions")
        return _PairSet(np.concatenate(conds), np.concatenate(chunks).astype(np.float32))

    def fit(self, trajs, y=None):
        trajs = check_trajectories(trajs, require_actions=True)
        if any(t.actions is None for t in trajs):
            raise MissingActions("inverse dynamics needs ground-truth actions")
        ps = self._pairs(trajs, _flat_videos(trajs))
        self.model_ = FlowIDMNet(seed=self.seed, horizon=self.horizon, hidden=self.hidden, depth=self.depth)
        self.n_pairs_ = len(ps.cond)

        def loss_fn(rng):
            idx = rng.integers(0, len(ps.cond), self.batch_size)
            x1 = ps.chunks[idx]
            x0 = rng.standard_normal(x1.shape).astype(np.float32)
            tau = rng.uniform(0, 1, len(idx)).astype(np.float32)
            xt = (1 - tau[:, None]) * x0 + tau[:, None] * x1
            return T.mse(self.model_(ps.cond[idx], xt, tau), x1 - x0)

        self.history_ = self._train(loss_fn, self.model_.trainable(), self.steps, self.lr,
                                    np.random.default_rng(self.seed), cosine=True)
        return self

    def predict_chunks(self, cond: np.ndarray, seed: int = 0) -> np.ndarray:
        """Integrate the learned velocity field from seeded noise; returns (N, H, 3) in [-1, 1]."""
        self._check_fitted()
        rng = np.random.default_rng(seed)
        n = len(cond)
        x = (rng.standard_normal((n, self.horizon * ACTION_DIM)) * self.noise_scale).astype(np.float32)
        dt = 1.0 / self.n_flow_steps
        for k in range(self.n_flow_steps):
            tau = np.full(n, k * dt, np.float32)
            x = x + dt * self.model_(cond, x, tau).data
        return np.clip(x, -1.0, 1.0).reshape(n, self.horizon, ACTION_DIM)

    def predict(self, frame_pairs, seed: int = 0) -> np.ndarray:
        """Chunks for explicit (frame_t, frame_t+H) pairs."""
        conds = []
        for f0, f1 in frame_pairs:
            flat = encode_video(np.stack([f0, f1])).flat()
            conds.append(pair_features(flat, np.array([0]), np.array([1]))[0])
        return self.predict_chunks(np.stack(conds), seed)

    def label(self, traj: Trajectory, seed: int = 0) -> Trajectory:
        """Sliding-window labels: one chunk per start t in [0, T-H], overlapping predictions merged."""
        H = self.horizon
        n = len(traj.frames) - 1
        if n < H:
            raise TooShort(f"trajectory has {n} transitions, need at least {H}")
        flat = encode_video(traj.frames).flat()
        starts = np.arange(0, n - H + 1)
        chunks = self.predict_chunks(pair_features(flat, starts, starts + H), seed)
        return traj.with_actions(merge_windows(chunks, n, self.merge))

    def replay_score(self, trajs, seed: int = 0) -> float:
        """Fraction of ground-truth episodes whose relabeled actions, replayed in the simulator,
        end in a decoded state that passes the task oracle.

        Shapes are pinned from the unoccluded first frame, as in the bench oracles; an object
        resting inside a container is otherwise often misread as another shape."""
        from .gridsim import default_catalog

        cat = default_catalog()
        ok = []
        for t in trajs:
            task = cat.task(t.task_id)
            lab = self.label(Trajectory(t.frames, instruction=t.instruction, task_id=t.task_id), seed)
            final = rollout_actions(t.states[0], lab.actions)[-1]
            shapes = {c: e.shape for c, e in inverse_render(t.frames[0]).entities.items()}
            d = inverse_render(render(final), shapes)
            ok.append(bool(is_success(task, d)))
        return float(np.mean(ok))


def merge_windows(chunks: np.ndarray, n: int, how: str = "mean") -> np.ndarray:
    """Combine (n_windows, H, d) chunks starting at 0, 1, ... into n per-step actions."""
    n_win, H, d = chunks.shape
    per_step = [[] for _ in range(n)]
    for s in range(n_win):
        for k in range(H):
            per_step[s + k].append(chunks[s, k])
    out = np.empty((n, d), np.float32)
    for i, preds in enumerate(per_step):
        p = np.stack(preds)
        if how == "mean":
            out[i] = p.mean(0)
        elif how == "median":
            out[i] = np.median(p, 0)
        elif how == "first":
            out[i] = p[0]  # earliest window covering step i
        else:
            raise ValueError(f"unknown merge rule {how!r}")
    return out


# ---------------------------------------------------------------- latent actions

DYN_DIM = N_SLOTS * OBJ_DYN + ACTOR_DIM


@register_architecture("latent_codec")
class LatentCodecNet(Module):
    def __init__(self, seed: int = 0, codebook_size: int = 8, seq_len: int = 16, code_dim: int = 4, hidden: int = 128):
        rng = np.random.default_rng(seed)
        self.config = {"codebook_size": codebook_size, "seq_len": seq_len, "code_dim": code_dim, "hidden": hidden}
        self.encoder = MLP([DYN_DIM, hidden, hidden, seq_len * code_dim], rng)
        self.codebook = Embedding(codebook_size, code_dim, rng, std=1.0)
        self.decoder = MLP([FLAT_DIM + seq_len * code_dim, hidden, hidden, DYN_DIM], rng, out_scale=0.5)

    def encode(self, x: np.ndarray) -> Tensor:
        L, D = self.config["seq_len"], self.config["code_dim"]
        return T.reshape(self.encoder(Tensor(x)), (len(x), L, D))

    def quantize(self, ze: np.ndarray) -> np.ndarray:
        cb = self.codebook.weight.data
        d = ((ze[..., None, :] - cb) ** 2).sum(-1)
        return d.argmin(-1)

    def loss(self, enc_in, flat_t, target, beta: float = 0.25, fixed=None):
        """VQ-VAE loss.  ``fixed=(idx, ze, zq)`` freezes the code choice and every stop-gradient value
        (including the straight-through offset zq - ze) so finite differences see the same function
        the analytic gradient describes."""
        n = len(enc_in)
        ze = self.encode(enc_in)
        if fixed is None:
            idx = self.quantize(ze.data)
            zq = self.codebook(idx)
            ze_sg, zq_sg = ze.data, zq.data
            dec_in = T.straight_through(ze, T.stop_gradient(zq))
        else:
            idx, ze_sg, zq_sg = fixed
            zq = self.codebook(idx)
            dec_in = ze + Tensor(zq_sg - ze_sg)
        pred = self.decoder(T.concat([Tensor(flat_t), T.reshape(dec_in, (n, -1))], axis=-1))
        rec = T.mse(pred, target)
        book = T.mse(zq, ze_sg)
        commit = T.mse(ze, zq_sg)
        return rec + book + commit * beta, rec, idx, ze, zq


def _dyn(flat: np.ndarray) -> np.ndarray:
    return flat[..., :DYN_DIM]


def _codec_inputs(flat: np.ndarray, t0, t1):
    delta = ((_dyn(flat[t1]) - _dyn(flat[t0])) * DELTA_SCALE).astype(np.float32)
    return delta, flat[t0], delta


class LatentActionCodec(NetEstimator):
    """VQ-VAE over (frame_t, frame_t+delta); exports code indices and pre-quantization embeddings."""

    def __init__(self, codebook_size: int = 8, seq_len: int = 16, code_dim: int = 4, hidden: int = 128,
                 delta: int = DEFAULT_CONFIG.fps, steps: int = 2000, batch_size: int = 256, lr: float = 1e-3,
                 beta: float = 0.25, seed: int = 0):
        self.codebook_size = codebook_size
        self.seq_len = seq_len
        self.code_dim = code_dim
        self.hidden = hidden
        self.delta = delta
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta = beta
        self.seed = seed

    def _pairs(self, flats):
        xs, fs, ys = [], [], []
        for flat in flats:
            n = len(flat) - self.delta
            if n <= 0:
                continue
            t0 = np.arange(n)
            x, f, y = _codec_inputs(flat, t0, t0 + self.delta)
            xs.append(x)
            fs.append(f)
            ys.append(y)
        if not xs:
            raise TooShort(f"no video longer than {self.delta} frames")
        return np.concatenate(xs), np.concatenate(fs), np.concatenate(ys)

    def fit(self, videos, y=None):
        videos = check_trajectories(videos)
        X, F, Y = self._pairs(_flat_videos(videos))
        self.model_ = LatentCodecNet(seed=self.seed, codebook_size=self.codebook_size, seq_len=self.seq_len,
                                     code_dim=self.code_dim, hidden=self.hidden)
        rng = np.random.default_rng(self.seed)
        # start the codebook on encoder outputs so no code begins dead
        ze = self.model_.encode(X[rng.integers(0, len(X), 512)]).data.reshape(-1, self.code_dim)
        self.model_.codebook.weight.data = ze[rng.choice(len(ze), self.codebook_size, replace=False)].copy()

        def loss_fn(r):
            idx = r.integers(0, len(X), self.batch_size)
            return self.model_.loss(X[idx], F[idx], Y[idx], self.beta)[0]

        self.history_ = self._train(loss_fn, self.model_.trainable(), self.steps, self.lr, rng, cosine=True)
        return self

    def encode(self, frames_t, frames_t1):
        """Codes and continuous embeddings for aligned frame lists."""
        self._check_fitted()
        out_idx, out_ze = [], []
        for f0, f1 in zip(frames_t, frames_t1):
            flat = encode_video(np.stack([f0, f1])).flat()
            x, _, _ = _codec_inputs(flat, np.array([0]), np.array([1]))
            ze = self.model_.encode(x).data
            out_idx.append(self.model_.quantize(ze)[0])
            out_ze.append(ze[0].reshape(-1))
        return np.stack(out_idx), np.stack(out_ze)

    def _label_arrays(self, flat):
        n = len(flat) - self.delta
        t0 = np.arange(n)
        x, f, y = _codec_inputs(flat, t0, t0 + self.delta)
        ze = self.model_.encode(x).data
        return self.model_.quantize(ze), ze.reshape(n, -1), x, f, y

    def label(self, traj: Trajectory) -> Trajectory:
        """Attach one latent action per start t in [0, T - delta]."""
        self._check_fitted()
        if len(traj.frames) <= self.delta:
            raise TooShort(f"need more than {self.delta} frames, got {len(traj.frames)}")
        idx, cont, *_ = self._label_arrays(encode_video(traj.frames).flat())
        from dataclasses import replace
        return replace(traj, latent=LatentActions(idx, cont))

    def reconstruction_loss(self, videos) -> tuple[float, float]:
        """(model, copy-baseline) slot-delta reconstruction MSE on held-out videos."""
        self._check_fitted()
        X, F, Y = self._pairs(_flat_videos(videos))
        _, rec, *_ = self.model_.loss(X, F, Y, self.beta)
        return rec.item(), float(np.mean(Y ** 2))

    def pixel_reconstruction(self, videos) -> tuple[float, float]:
        """(model, copy-baseline) pixel MSE of frame t+delta rendered from the decoded slots."""
        from .features import render_slots

        self._check_fitted()
        errs, base = [], []
        for v in videos:
            sv = encode_video(v.frames)
            flat = sv.flat()
            n = len(flat) - self.delta
            if n <= 0:
                continue
            idx, _, x, f, y = self._label_arrays(flat)
            zq = self.model_.codebook.weight.data[idx].reshape(n, -1)
            pred = self.model_.decoder(Tensor(np.concatenate([f, zq], 1))).data / DELTA_SCALE
            dyn = _dyn(flat[:n]) + pred
            for t in range(n):
                objs = dyn[t, :N_SLOTS * OBJ_DYN].reshape(N_SLOTS, OBJ_DYN).copy()
                objs[:, 0] = sv.objs[t, :, 0]
                actor = dyn[t, N_SLOTS * OBJ_DYN:].copy()
                actor[[0, 4]] = sv.actor[t, [0, 4]]
                frame = render_slots(objs, actor, sv.statics, v.frames.shape[1])
                target = v.frames[t + self.delta].astype(np.float32)
                errs.append(np.mean((frame - target) ** 2))
                base.append(np.mean((v.frames[t].astype(np.float32) - target) ** 2))
        return float(np.mean(errs)) / 255 ** 2, float(np.mean(base)) / 255 ** 2

    def perplexity(self, videos) -> float:
        self._check_fitted()
        X, _, _ = self._pairs(_flat_videos(videos))
        idx = self.model_.quantize(self.model_.encode(X).data).reshape(-1)
        p = np.bincount(idx, minlength=self.codebook_size) / idx.size
        p = p[p > 0]
        return float(np.exp(-(p * np.log(p)).sum()))


# ---------------------------------------------------------------- functional API

def train_idm(robot_ds, config: dict | None = None, seed: int = 0) -> ModelBundle:
    return InverseDynamics(**(config or {}), seed=seed).fit(robot_ds).bundle_


def idm_label(bundle: ModelBundle, traj: Trajectory, seed: int = 0) -> Trajectory:
    return InverseDynamics.from_bundle(bundle).label(traj, seed)


def train_latent_codec(videos, C: int = 8, L: int = 16, seed: int = 0, **kw) -> ModelBundle:
    return LatentActionCodec(codebook_size=C, seq_len=L, seed=seed, **kw).fit(videos).bundle_


def latent_label(bundle: ModelBundle, traj: Trajectory) -> Trajectory:
    return LatentActionCodec.from_bundle(bundle).label(traj)
