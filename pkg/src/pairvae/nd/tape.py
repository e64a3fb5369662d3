"""Named parameter collections and the loss-to-gradient entry point."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class ParamTape:
    """An ordered, uniquely named set of parameter tensors.

    Iteration order is insertion order and is the serialization order used
    everywhere (checkpoints, Adam moments, finite-difference sweeps).
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        """Register a parameter; returns the (shared) leaf tensor."""
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        self._params[name] = tensor
        return tensor

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def names(self) -> Tuple[str, ...]:
        return tuple(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> Dict[str, np.ndarray]:
        """Current gradients by name; parameters untouched by backward get zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())


def backward(loss: Tensor, tape: ParamTape) -> Dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every tape parameter.

    Parameters the loss never touched come back as zero arrays.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("loss must be a scalar Tensor")
    tape.zero_grad()
    loss.backward()
    return tape.gradients()
