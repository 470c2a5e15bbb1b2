"""Central finite-difference gradient checks (run in float64)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: dict[str, float] = field(default_factory=dict)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


ABS_FLOOR = 1e-6  # gradients smaller than this (e.g. exactly-zero ones) are compared absolutely


def _rel(a: np.ndarray, n: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(n), ABS_FLOOR)
    return float(np.linalg.norm(a - n) / denom)


def gradcheck(fn: Callable[[], Tensor], inputs: dict[str, Tensor], h: float = 1e-5,
              max_probes: int | None = 64, seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients of the scalar ``fn()`` against central differences.

    ``fn`` must read the tensors in ``inputs`` (which are perturbed in place).
    Large inputs are probed at ``max_probes`` random coordinates.
    """
    for t in inputs.values():
        t.grad = None
    out = fn()
    out.backward()
    rng = np.random.default_rng(seed)
    per = {}
    for name, t in inputs.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_probes is None or n <= max_probes else rng.choice(n, max_probes, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = float(fn().data)
            flat[i] = old - h
            fm = float(fn().data)
            flat[i] = old
            num[j] = (fp - fm) / (2 * h)
        per[name] = _rel(analytic.reshape(-1)[idx], num)
    for t in inputs.values():
        t.grad = None
    return GradCheckResult(max(per.values()) if per else 0.0, per)
