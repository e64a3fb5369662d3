"""MLP layer descriptors, seeded initialization, and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..errors import ContractError, ShapeError
from .tape import ParamTape
from .tensor import Tensor

ACTIVATIONS = ("linear", "tanh", "relu")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ContractError(f"layer dims must be positive, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")


def init_mlp(layers: Sequence[LayerSpec], rng: np.random.Generator) -> ParamTape:
    """Fresh tape with W_i ~ U(+-sqrt(6/(fan_in+fan_out))) and zero biases."""
    tape = ParamTape()
    for i, layer in enumerate(layers):
        bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        tape.add(f"W{i}", rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim)))
        tape.add(f"b{i}", np.zeros(layer.out_dim))
    return tape


def mlp_forward(tape: ParamTape, x: Union[Tensor, np.ndarray], layers: Sequence[LayerSpec]) -> Tensor:
    """Run ``x`` (a vector or a batch of row vectors) through the layer stack."""
    h = Tensor.as_tensor(x)
    if h.ndim not in (1, 2):
        raise ShapeError(f"input must be 1-D or 2-D, got shape {h.shape}")
    for i, layer in enumerate(layers):
        if h.shape[-1] != layer.in_dim:
            raise ShapeError(
                f"layer {i} expects inputs of dim {layer.in_dim}, got {h.shape[-1]}"
            )
        w, b = tape[f"W{i}"], tape[f"b{i}"]
        if w.shape != (layer.in_dim, layer.out_dim):
            raise ShapeError(
                f"layer {i} weight shape {w.shape} != spec {(layer.in_dim, layer.out_dim)}"
            )
        h = h @ w + b
        if layer.activation == "tanh":
            h = h.tanh()
        elif layer.activation == "relu":
            h = h.relu()
    return h
