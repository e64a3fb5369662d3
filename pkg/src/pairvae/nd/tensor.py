"""Reverse-mode autodiff over dense float64 numpy arrays.

A ``Tensor`` is a node in a dynamically built computation graph.  The op set
is deliberately small: affine maps, tanh/ReLU, elementwise arithmetic,
exp/log/sqrt, powers with constant exponent, clamping, column slicing and
sum/mean reductions.  That is exactly what MLP encoder/decoder graphs and
their losses need, and every op here is covered by the finite-difference
checker in ``gradcheck``.

All data is stored row-major as ``np.float64``; ops are pure (fresh output
arrays, inputs never mutated), so identical inputs give bitwise-identical
outputs.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from ..errors import ContractError, ShapeError

Scalar = Union[int, float]
TensorLike = Union["Tensor", np.ndarray, Scalar, Sequence]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    ``grad`` is ``None`` until a backward pass touches this node.  Leaf
    tensors (parameters, inputs) have no parents; interior nodes carry a
    closure that routes the incoming gradient to their parents.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data: TensorLike, _parents: tuple = (), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    # -- graph construction helpers -------------------------------------------

    @staticmethod
    def as_tensor(value: TensorLike) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def _accumulate(self, grad: np.ndarray) -> None:
        self.grad += _unbroadcast(grad, self.data.shape)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other: TensorLike) -> "Tensor":
        other = Tensor.as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def _bw(g):
            self._accumulate(g)
            other._accumulate(g)

        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other: TensorLike) -> "Tensor":
        other = Tensor.as_tensor(other)
        out = Tensor(self.data - other.data, (self, other))

        def _bw(g):
            self._accumulate(g)
            other._accumulate(-g)

        out._backward = _bw
        return out

    def __rsub__(self, other: TensorLike) -> "Tensor":
        return Tensor.as_tensor(other) - self

    def __mul__(self, other: TensorLike) -> "Tensor":
        other = Tensor.as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def _bw(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other: TensorLike) -> "Tensor":
        other = Tensor.as_tensor(other)
        out = Tensor(self.data / other.data, (self, other))

        def _bw(g):
            self._accumulate(g / other.data)
            other._accumulate(-g * self.data / (other.data * other.data))

        out._backward = _bw
        return out

    def __rtruediv__(self, other: TensorLike) -> "Tensor":
        return Tensor.as_tensor(other) / self

    def __pow__(self, exponent: Scalar) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise ContractError("only constant exponents are supported")
        p = float(exponent)
        out = Tensor(self.data**p, (self,))
        out._backward = lambda g: self._accumulate(g * p * self.data ** (p - 1.0))
        return out

    def __matmul__(self, other: TensorLike) -> "Tensor":
        other = Tensor.as_tensor(other)
        if other.ndim != 2 or self.ndim not in (1, 2):
            raise ShapeError(
                f"matmul supports (n,)@(n,m) or (b,n)@(n,m); got {self.shape} @ {other.shape}"
            )
        if self.shape[-1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data, (self, other))

        def _bw(g):
            g2 = np.atleast_2d(g)
            self._accumulate((g2 @ other.data.T).reshape(self.data.shape))
            other._accumulate(np.atleast_2d(self.data).T @ g2)

        out._backward = _bw
        return out

    # -- nonlinearities ----------------------------------------------------------

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.data), (self,))
        out._backward = lambda g: self._accumulate(g * (1.0 - out.data * out.data))
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), (self,))
        out._backward = lambda g: self._accumulate(g * (self.data > 0.0))
        return out

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), (self,))
        out._backward = lambda g: self._accumulate(g * out.data)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def sqrt(self) -> "Tensor":
        out = Tensor(np.sqrt(self.data), (self,))

        def _bw(g):
            # zero subgradient at 0 keeps sqrt(sum of squares) NaN-free
            denom = 2.0 * out.data
            self._accumulate(np.where(denom > 0.0, g / np.where(denom > 0.0, denom, 1.0), 0.0))

        out._backward = _bw
        return out

    def clamp(self, lo: float, hi: float) -> "Tensor":
        out = Tensor(np.clip(self.data, lo, hi), (self,))
        mask = (self.data > lo) & (self.data < hi)
        out._backward = lambda g: self._accumulate(g * mask)
        return out

    # -- shape ops ------------------------------------------------------------

    def slice_cols(self, start: int, stop: int) -> "Tensor":
        """Contiguous slice along the last axis."""
        n = self.shape[-1]
        if not (0 <= start <= stop <= n):
            raise ShapeError(f"slice [{start}:{stop}] out of range for last dim {n}")
        out = Tensor(self.data[..., start:stop].copy(), (self,))

        def _bw(g):
            full = np.zeros_like(self.data)
            full[..., start:stop] = g
            self._accumulate(full)

        out._backward = _bw
        return out

    # -- reductions --------------------------------------------------------------

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis), (self,))

        def _bw(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy())

        out._backward = _bw
        return out

    def mean(self) -> "Tensor":
        out = Tensor(self.data.mean(), (self,))
        inv = 1.0 / self.data.size
        out._backward = lambda g: self._accumulate(np.broadcast_to(g * inv, self.data.shape).copy())
        return out

    # -- backward pass -------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients of every node reached from here are reset to zero before
        accumulation, then filled; leaves outside the graph keep ``grad=None``.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
