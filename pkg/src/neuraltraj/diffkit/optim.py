from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import NonFinite
from .tensor import Tensor


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> dict[str, np.ndarray]:
    """One Adam update; returns new arrays and advances ``state`` in place."""
    for k, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFinite(f"non-finite gradient for {k}")
    state.t += 1
    b1, b2 = betas
    c1, c2 = 1 - b1 ** state.t, 1 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = p
            continue
        if weight_decay:
            g = g + weight_decay * p
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = (p - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return out


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, clip_norm: float | None = None):
        self.params = dict(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                                 for p in self.params.values() if p.grad is not None)))

    def step(self):
        grads = {k: p.grad for k, p in self.params.items()}
        if self.clip_norm is not None:
            n = self.grad_norm()
            if not np.isfinite(n):
                raise NonFinite("non-finite gradient norm")
            if n > self.clip_norm:
                grads = {k: None if g is None else g * (self.clip_norm / n) for k, g in grads.items()}
        new = adam_step({k: p.data for k, p in self.params.items()}, grads, self.state,
                        self.lr, self.betas, self.eps, self.weight_decay)
        for k, p in self.params.items():
            p.data = new[k]
