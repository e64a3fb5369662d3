"""Minimal dense-tensor math: reverse-mode autodiff, MLPs, Adam, gradient checks."""

from .gradcheck import finite_diff_check
from .mlp import ACTIVATIONS, LayerSpec, init_mlp, mlp_forward
from .optim import AdamState, adam_step
from .tape import ParamTape, backward
from .tensor import Tensor

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "LayerSpec",
    "ParamTape",
    "Tensor",
    "adam_step",
    "backward",
    "finite_diff_check",
    "init_mlp",
    "mlp_forward",
]
