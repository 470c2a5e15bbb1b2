"""Network blocks shared by the world model and the policy."""

from __future__ import annotations

import numpy as np

from .diffkit import MLP, Embedding, LayerNorm, Linear, Module, Tensor
from .diffkit import ops as T
from .features import N_SHAPES, N_SLOTS, OBJ_DYN, TOKEN_SIZES

REL_SCALE = 4.0
SLOT_IN = OBJ_DYN + 2 + N_SHAPES  # dynamic slot, position relative to the actor, shape one-hot


class InstructionEmbed(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.tables = [Embedding(n, dim, rng) for n in TOKEN_SIZES]

    def forward(self, tokens: np.ndarray) -> Tensor:
        out = self.tables[0](tokens[:, 0])
        for i in range(1, len(self.tables)):
            out = out + self.tables[i](tokens[:, i])
        return out


def slot_inputs(objs: np.ndarray, shapes: np.ndarray, actor: np.ndarray) -> np.ndarray:
    """(N, S, SLOT_IN) raw per-slot features."""
    rel = (objs[:, :, 1:3] - actor[:, None, 1:3]) * REL_SCALE * objs[:, :, :1]
    return np.concatenate([objs, rel, shapes], axis=-1).astype(objs.dtype)


class SlotAttention(Module):
    """Instruction/actor-queried multi-head attention over color slots."""

    def __init__(self, q_dim: int, d_model: int, n_heads: int, rng: np.random.Generator, extra_dim: int = 0):
        self.config_ = (q_dim, d_model, n_heads, extra_dim)
        self.color = Embedding(N_SLOTS, d_model, rng, std=0.3)
        self.slot_in = Linear(SLOT_IN + extra_dim, d_model, rng)
        self.norm = LayerNorm(d_model)
        self.q = Linear(q_dim, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self._heads = n_heads

    def tokens(self, slots: np.ndarray | Tensor) -> Tensor:
        n = slots.shape[0]
        x = slots if isinstance(slots, Tensor) else Tensor(slots)
        ids = np.broadcast_to(np.arange(N_SLOTS), (n, N_SLOTS))
        return self.norm(T.gelu(self.slot_in(x) + self.color(ids)))

    def forward(self, query_in: Tensor, tok: Tensor, present: np.ndarray) -> Tensor:
        n, s, d = tok.shape
        h = self._heads
        dk = d // h
        q = T.reshape(self.q(query_in), (n, h, 1, dk))
        k = T.transpose(T.reshape(self.k(tok), (n, s, h, dk)), (0, 2, 3, 1))  # n h dk s
        v = T.transpose(T.reshape(self.v(tok), (n, s, h, dk)), (0, 2, 1, 3))  # n h s dk
        logits = T.matmul(q, k) * (1.0 / np.sqrt(dk))
        mask = ((present - 1.0) * 1e4).astype(tok.dtype).reshape(n, 1, 1, s)
        att = T.softmax(logits + mask, axis=-1)
        out = T.matmul(att, v)  # n h 1 dk
        return T.reshape(out, (n, d))


class SlotTrunk(Module):
    """Slot tokens + instruction + actor/state vector -> context vector."""

    def __init__(self, ctx_dim: int, d_model: int, n_heads: int, hidden: int, rng: np.random.Generator,
                 slot_extra: int = 0, instr_dim: int = 32):
        self.instr = InstructionEmbed(instr_dim, rng)
        self.att = SlotAttention(instr_dim + ctx_dim, d_model, n_heads, rng, slot_extra)
        self.mix = MLP([instr_dim + ctx_dim + d_model, hidden, hidden], rng)

    def forward(self, slots, present, ctx: Tensor, tokens: np.ndarray):
        e = self.instr(tokens)
        q_in = T.concat([e, ctx], axis=-1)
        tok = self.att.tokens(slots)
        pooled = self.att(q_in, tok, present)
        h = T.gelu(self.mix(T.concat([q_in, pooled], axis=-1)))
        return h, tok, e
