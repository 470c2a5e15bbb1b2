"""Small numpy autodiff kernel with Adam, low-rank adapters and checkpoints."""

from . import tensor as ops
from .bundle import ARCHITECTURES, ModelBundle, register_architecture
from .gradcheck import GradCheckResult, gradcheck
from .lora import (
    DEFAULT_ALPHA,
    DEFAULT_RANK,
    adapter_params,
    attach_lora,
    base_params,
    detach_lora,
    linear_paths,
    merge_lora,
    reattach_lora,
)
from .nn import MLP, Conv2d, Embedding, LayerNorm, Linear, LoraAdapter, Module
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor

__all__ = [
    "ops", "ARCHITECTURES", "ModelBundle", "register_architecture", "GradCheckResult", "gradcheck",
    "DEFAULT_ALPHA", "DEFAULT_RANK", "adapter_params", "attach_lora", "base_params", "detach_lora",
    "linear_paths", "merge_lora", "reattach_lora", "MLP", "Conv2d", "Embedding", "LayerNorm",
    "Linear", "LoraAdapter", "Module", "Adam", "AdamState", "adam_step", "Tensor", "as_tensor",
]
