"""Adam with bias correction, keyed by parameter name."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..errors import NumericError, ShapeError
from .tape import ParamTape


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, tape: ParamTape, grads: Dict[str, np.ndarray]) -> None:
    """One in-place Adam update over every parameter in the tape.

    Moments start at zero the first time a parameter is seen.  A NaN/Inf
    gradient aborts before any parameter is touched.
    """
    for name, _ in tape.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")

    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, param in tape.items():
        g = grads[name]
        if g.shape != param.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} != parameter shape {param.data.shape} for {name!r}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        param.data = param.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
