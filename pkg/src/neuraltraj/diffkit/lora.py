"""Low-rank adapter overlays on Linear layers."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..exceptions import UnknownTarget
from .nn import Linear, LoraAdapter, Module

DEFAULT_RANK = 4
DEFAULT_ALPHA = 4.0


def _is_bundle(x) -> bool:
    return hasattr(x, "build") and hasattr(x, "adapters")


def linear_paths(model: Module) -> list[str]:
    return [k for k, m in model.named_modules().items() if isinstance(m, Linear) and ".lora" not in k]


def _resolve(model: Module, targets: Iterable[str]) -> dict[str, Linear]:
    mods = model.named_modules()
    out = {}
    for t in targets:
        m = mods.get(t)
        if not isinstance(m, Linear):
            raise UnknownTarget(t)
        out[t] = m
    return out


def attach_lora(model: Module, targets: Iterable[str] | None = None, r: int = DEFAULT_RANK,
                alpha: float = DEFAULT_ALPHA, seed: int = 0) -> Module:
    """Freeze every base parameter and add trainable (A, B) overlays on ``targets``.

    Accepts a module (modified in place) or a ModelBundle (a new bundle is returned).
    """
    if _is_bundle(model):
        m = attach_lora(model.build(), targets, r, alpha, seed)
        return type(model).from_model(m, model.seed, model.meta)
    targets = list(linear_paths(model) if targets is None else targets)
    layers = _resolve(model, targets)
    for p in model.parameters():
        p.requires_grad = False
    rng = np.random.default_rng(seed)
    for name in targets:
        lin = layers[name]
        n_out, n_in = lin.weight.shape
        lin.lora = LoraAdapter(n_in, n_out, r, alpha, rng, dtype=lin.weight.dtype)
    return model


def detach_lora(model: Module) -> dict[str, LoraAdapter]:
    """Remove overlays (returned) so the model computes its frozen base function."""
    removed = {}
    for name in linear_paths(model):
        lin = model.named_modules()[name]
        if lin.lora is not None:
            removed[name], lin.lora = lin.lora, None
    return removed


def reattach_lora(model: Module, adapters: dict[str, LoraAdapter]) -> Module:
    layers = _resolve(model, adapters)
    for name, ad in adapters.items():
        layers[name].lora = ad
    return model


def merge_lora(model: Module) -> Module:
    """Fold each overlay into its weight and drop it; all weights become trainable again."""
    if _is_bundle(model):
        return type(model).from_model(merge_lora(model.build()), model.seed, model.meta)
    for name in linear_paths(model):
        lin = model.named_modules()[name]
        if lin.lora is not None:
            lin.weight.data = (lin.weight.data + lin.lora.delta()).astype(lin.weight.dtype)
            lin.lora = None
    for p in model.parameters():
        p.requires_grad = True
    return model


def adapter_params(model: Module) -> dict[str, np.ndarray]:
    return {k: v for k, v in model.state_dict().items() if ".lora." in k}


def base_params(model: Module) -> dict[str, np.ndarray]:
    return {k: v for k, v in model.state_dict().items() if ".lora." not in k}
