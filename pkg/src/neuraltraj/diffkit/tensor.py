"""Reverse-mode autodiff over numpy arrays."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exceptions import NonFinite, ShapeMismatch

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data) if isinstance(data, (np.ndarray, np.generic)) else np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    # ------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"non-finite gradient reaching tensor of shape {self.shape}")
        self.grad = g.astype(self.data.dtype, copy=True) if self.grad is None else self.grad + g

    def backward(self, grad=None):
        """Populate ``.grad`` on every tensor reachable from here that requires it."""
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NonFinite(f"non-finite gradient flowing into op {node.op!r} with shape {node.shape}")
            node._backward(node.grad)
            if node._parents:
                node.grad = None if node is not self else node.grad

    # ------------------------------------------------------------ operators
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(as_tensor(o, self.dtype), self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(as_tensor(o, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"non-finite output from op {op!r} with shape {np.shape(data)}")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, b.dtype if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = as_tensor(b, a.dtype)
    return a, b


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        a._accum(g)
        b._accum(g)
    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        a._accum(g)
        b._accum(-g)
    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        a._accum(g * b.data)
        b._accum(g * a.data)
    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        a._accum(g / b.data)
        b._accum(-g * a.data / (b.data * b.data))
    return _make(out, (a, b), bw, "div")


def power(a: Tensor, k: float) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data ** k

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            a._accum(g * k * a.data ** (k - 1))
    return _make(out, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def bw(g):
        a._accum(g * out)
    return _make(out, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def bw(g):
        a._accum(g / a.data)
    return _make(out, (a,), bw, "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        a._accum(g * (1.0 - out * out))
    return _make(out, (a,), bw, "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = a.data * mask

    def bw(g):
        a._accum(g * mask)
    return _make(out, (a,), bw, "relu")


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation."""
    x = a.data
    c = np.sqrt(2.0 / np.pi).astype(x.dtype)
    u = c * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        du = c * (1.0 + 3 * 0.044715 * x * x)
        a._accum(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))
    return _make(out, (a,), bw, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60, 60)))

    def bw(g):
        a._accum(g * out * (1.0 - out))
    return _make(out.astype(a.dtype), (a,), bw, "sigmoid")


# ---------------------------------------------------------------- reductions / shape

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))
    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from e

    def bw(g):
        a._accum(g.reshape(a.shape))
    return _make(out, (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        a._accum(np.transpose(g, inv))
    return _make(out, (a,), bw, "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)
    return _make(np.array(out), (a,), bw, "getitem")


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {[t.shape for t in ts]}") from e
    edges = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, edges, axis=axis)):
            t._accum(part)
    return _make(out, ts, bw, "concat")


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            t._accum(np.take(g, i, axis=axis))
    return _make(out, ts, bw, "stack")


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def bw(g):
        a._accum(g)
    return _make(out, (a,), bw, "broadcast")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matmul with numpy broadcasting over leading dimensions."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        a._accum(g @ np.swapaxes(b.data, -1, -2))
        b._accum(np.swapaxes(a.data, -1, -2) @ g)
    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T + b with w stored as (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} != weight in-dim {w.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data.T
    if b is not None:
        out = out + b.data
    out = out.reshape(*lead, w.shape[0])

    def bw(g):
        g2 = g.reshape(-1, w.shape[0])
        x._accum((g2 @ w.data).reshape(x.shape))
        w._accum(g2.T @ x2)
        if b is not None:
            b._accum(g2.sum(0))
    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "linear")


# ---------------------------------------------------------------- normalization / probabilities

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _make(out, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        a._accum(g - p * g.sum(axis=axis, keepdims=True))
    return _make(out, (a,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    n = x.shape[-1]

    def bw(g):
        gx = g * gamma.data if gamma is not None else g
        dx = inv / n * (n * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
        x._accum(dx)
        if gamma is not None:
            gamma._accum((g * xhat).reshape(-1, n).sum(0))
        if beta is not None:
            beta._accum(g.reshape(-1, n).sum(0))
    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    return _make(out, parents, bw, "layer_norm")


def embedding(weight: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise ShapeMismatch(f"embedding index out of range for table of {weight.shape[0]} rows")
    out = weight.data[idx]

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, weight.shape[1]))
        weight._accum(full)
    return _make(out, (weight,), bw, "embedding")


# ---------------------------------------------------------------- losses

def mse(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    d = pred.data - target
    out = np.asarray((d * d).mean(), dtype=pred.dtype)

    def bw(g):
        pred._accum(g * 2.0 * d / d.size)
    return _make(out, (pred,), bw, "mse")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits) on the last axis."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    c = logits.shape[-1]
    z = logits.data - logits.data.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    flat = logp.reshape(-1, c)
    t = targets.reshape(-1)
    out = np.asarray(-flat[np.arange(len(t)), t].mean(), dtype=logits.dtype)

    def bw(g):
        p = np.exp(flat)
        p[np.arange(len(t)), t] -= 1.0
        logits._accum((g * p / len(t)).reshape(logits.shape))
    return _make(out, (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------- convolution

def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols, oh, ow


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW convolution with weight (out, in, kh, kw), via im2col."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape}, weight {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    cm = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)
    wm = w.data.reshape(o, -1)
    out = cm @ wm.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        w._accum((g2.T @ cm).reshape(w.shape))
        if b is not None:
            b._accum(g2.sum(0))
        dcols = (g2 @ wm).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dx = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
        x._accum(dx[:, :, pad:pad + h, pad:pad + wd])
    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "conv2d")


# ---------------------------------------------------------------- gradient routing

def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


def straight_through(x: Tensor, q: Tensor) -> Tensor:
    """Forward value of ``q``, gradient passed unchanged to ``x``."""
    if x.shape != q.shape:
        raise ShapeMismatch(f"straight_through: {x.shape} vs {q.shape}")

    def bw(g):
        x._accum(g)
    return _make(q.data.copy(), (x,), bw, "straight_through")
