"""Parameter containers and layers built on :mod:`tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Tree of named parameters; children are discovered from attributes."""

    def _children(self):
        for name, v in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(v, (Module, Tensor)):
                yield name, v
            elif isinstance(v, (list, tuple)) and v and all(isinstance(m, Module) for m in v):
                for i, m in enumerate(v):
                    yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, v in self._children():
            full = f"{prefix}{name}"
            if isinstance(v, Tensor):
                out[full] = v
            else:
                out.update(v.named_parameters(full + "."))
        return out

    def named_modules(self, prefix: str = "") -> dict[str, "Module"]:
        out = {}
        for name, v in self._children():
            if isinstance(v, Module):
                full = f"{prefix}{name}"
                out[full] = v
                out.update(v.named_modules(full + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters().items() if p.requires_grad}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = self.named_parameters()
        if strict and set(state) != set(params):
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if k in params:
                if params[k].shape != np.shape(v):
                    raise ValueError(f"{k}: shape {np.shape(v)} != {params[k].shape}")
                params[k].data = np.array(v, dtype=params[k].dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)


def _param(arr, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    """Affine map with weight stored (out, in) and an optional low-rank overlay."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, scale: float = 1.0):
        bound = scale / np.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, (n_out, n_in)))
        self.bias = _param(np.zeros(n_out)) if bias else None
        self.lora = None

    @property
    def shape(self):
        return self.weight.shape

    def forward(self, x: Tensor) -> Tensor:
        y = T.linear(x, self.weight, self.bias)
        if self.lora is not None:
            y = y + self.lora(x)
        return y


class LoraAdapter(Module):
    """Low-rank update (alpha / r) * B @ A; B starts at zero so the overlay is initially inert."""

    def __init__(self, n_in: int, n_out: int, r: int, alpha: float, rng: np.random.Generator, dtype=np.float32):
        self.r, self.alpha = int(r), float(alpha)
        self.A = _param(rng.normal(0, 1.0 / np.sqrt(n_in), (r, n_in)), dtype)
        self.B = _param(np.zeros((n_out, r)), dtype)

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def delta(self) -> np.ndarray:
        return self.scale * (self.B.data @ self.A.data)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(T.linear(x, self.A), self.B) * self.scale


class MLP(Module):
    def __init__(self, sizes, rng: np.random.Generator, act: str = "gelu", out_scale: float = 1.0):
        self.layers = [Linear(a, b, rng, scale=out_scale if i == len(sizes) - 2 else 1.0)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self._act = {"relu": T.relu, "tanh": T.tanh, "gelu": T.gelu}[act]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self._act(x)
        return x


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, std: float = 0.5):
        self.weight = _param(rng.normal(0, std, (n, dim)))

    def forward(self, idx) -> Tensor:
        return T.embedding(self.weight, idx)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, pad: int = 0):
        bound = 1.0 / np.sqrt(c_in * k * k)
        self.weight = _param(rng.uniform(-bound, bound, (c_out, c_in, k, k)))
        self.bias = _param(np.zeros(c_out))
        self._stride, self._pad = stride, pad

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self._stride, self._pad)
